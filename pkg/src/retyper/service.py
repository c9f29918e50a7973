"""Read-only inference service.

Stateless protocol: the full function document travels with every request,
so constrained re-decoding needs no server-side session. The loaded model is
immutable and shared across concurrent requests.

Endpoints:
    POST /v1/predict     ranked candidates per variable
    POST /v1/refine      re-decode with analyst-pinned labels
    GET  /v1/health
    GET  /v1/typelib/{id}
"""

from __future__ import annotations

from typing import Literal

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .corpus import CorpusError, RawFunction, RawVariable, layout_from_json
from .decoding import Constraint, DecodingError, predict_function
from .pipeline import ArtifactBundle


class LocationDoc(BaseModel):
    kind: Literal["register", "stack"]
    name: str | None = None
    offset: int | None = None


class LayoutDoc(BaseModel):
    location: LocationDoc | None = None
    size: int | None = None
    offsets: list[int] = Field(default_factory=list)


class VariableDoc(BaseModel):
    decompiler_name: str
    occurrences: list[int]
    layout: LayoutDoc | None = None
    decompiler_type: str | None = None


class FunctionDoc(BaseModel):
    binary_id: str = "adhoc"
    function_id: str = "adhoc"
    tokens: list[str]
    variables: list[VariableDoc]


class PredictRequest(BaseModel):
    function: FunctionDoc
    beam_width: int = Field(default=5, ge=1, le=64)
    top_k: int = Field(default=5, ge=1, le=64)


class ConstraintDoc(BaseModel):
    type_id: int | None = None
    name_id: int | None = None


class RefineRequest(PredictRequest):
    constraints: dict[int, ConstraintDoc] = Field(default_factory=dict)


class CandidateDoc(BaseModel):
    type_id: int | None
    type: str | None
    name_id: int | None
    name: str | None
    log_prob: float


class VariableResponse(BaseModel):
    index: int
    decompiler_name: str
    layout_tokens: list[str]
    truncated_out: bool
    candidates: list[CandidateDoc]


class PredictResponse(BaseModel):
    variables: list[VariableResponse]
    warnings: list[str]


def _to_raw(doc: FunctionDoc) -> RawFunction:
    variables = []
    for var in doc.variables:
        layout = None
        if var.layout is not None:
            layout = layout_from_json(var.layout.model_dump())
        variables.append(
            RawVariable(
                decompiler_name=var.decompiler_name,
                occurrences=tuple(var.occurrences),
                layout=layout,
                decompiler_type=var.decompiler_type,
            )
        )
    fn = RawFunction(
        binary_id=doc.binary_id,
        function_id=doc.function_id,
        tokens=tuple(doc.tokens),
        variables=tuple(variables),
    )
    fn.validate()
    return fn


def create_app(bundle: ArtifactBundle | None) -> FastAPI:
    app = FastAPI(title="retyper", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def require_bundle() -> ArtifactBundle:
        if bundle is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return bundle

    def run(request: PredictRequest, constraint: Constraint | None) -> PredictResponse:
        b = require_bundle()
        try:
            raw = _to_raw(request.function)
            encoded = b.encode(raw)
        except CorpusError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        warnings = []
        n_pieces = sum(len(b.subword_vocab.encode_token(t)) for t in raw.tokens)
        if n_pieces > b.max_seq_length:
            warnings.append(
                f"function length {n_pieces} exceeds max_seq_length"
                f" {b.max_seq_length}; input truncated"
            )
        try:
            prediction = predict_function(
                encoded,
                b.model,
                b.layout_vocab,
                beam_width=request.beam_width,
                constraint=constraint,
            )
        except DecodingError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        variables = []
        for var, record in zip(prediction.variables, encoded.variables):
            candidates = [
                CandidateDoc(
                    type_id=c.type_id,
                    type=b.lib[c.type_id].canonical if c.type_id is not None else None,
                    name_id=c.name_id,
                    name=b.name_vocab.name_of(c.name_id) if c.name_id is not None else None,
                    log_prob=c.log_prob,
                )
                for c in var.candidates[: request.top_k]
            ]
            if record.truncated_out:
                warnings.append(
                    f"variable {record.name} has no occurrence inside the"
                    " truncated window; not predictable"
                )
            variables.append(
                VariableResponse(
                    index=var.index,
                    decompiler_name=record.name,
                    layout_tokens=list(record.layout_tokens),
                    truncated_out=record.truncated_out,
                    candidates=candidates,
                )
            )
        return PredictResponse(variables=variables, warnings=warnings)

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "model_loaded": bundle is not None}

    @app.post("/v1/predict", response_model=PredictResponse)
    def predict(request: PredictRequest) -> PredictResponse:
        return run(request, None)

    @app.post("/v1/refine", response_model=PredictResponse)
    def refine(request: RefineRequest) -> PredictResponse:
        b = require_bundle()
        n_vars = len(request.function.variables)
        types = {}
        names = {}
        for index, spec in request.constraints.items():
            if not 0 <= index < n_vars:
                raise HTTPException(
                    status_code=400, detail=f"constraint on unknown variable index {index}"
                )
            if spec.type_id is not None:
                if not 0 <= spec.type_id < len(b.lib):
                    raise HTTPException(status_code=400, detail=f"type id {spec.type_id} out of range")
                types[index] = spec.type_id
            if spec.name_id is not None:
                if not 0 <= spec.name_id < len(b.name_vocab):
                    raise HTTPException(status_code=400, detail=f"name id {spec.name_id} out of range")
                names[index] = spec.name_id
        constraint = Constraint(types, names) if (types or names) else None
        return run(request, constraint)

    @app.get("/v1/typelib/{type_id}")
    def typelib_entry(type_id: int) -> dict:
        b = require_bundle()
        if not 0 <= type_id < len(b.lib):
            raise HTTPException(status_code=404, detail=f"no type with id {type_id}")
        entry = b.lib[type_id]
        return {
            "id": entry.id,
            "name": entry.name,
            "kind": entry.kind.value,
            "size": entry.size,
            "member_offsets": list(entry.member_offsets),
            "fields": [list(f) for f in entry.fields],
            "canonical": entry.canonical,
        }

    return app
