from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from retyper.service import create_app


@pytest.fixture(scope="module")
def client(tiny_bundle) -> TestClient:
    return TestClient(create_app(tiny_bundle))


def function_doc(n_occurrences: int = 3) -> dict:
    tokens = ["void", "demo", "(", ")", "{"]
    occurrences = []
    for _ in range(n_occurrences):
        occurrences.append(len(tokens))
        tokens += ["v1", "=", "7", ";"]
    tokens.append("}")
    return {
        "binary_id": "b",
        "function_id": "f",
        "tokens": tokens,
        "variables": [
            {
                "decompiler_name": "v1",
                "occurrences": occurrences,
                "layout": {
                    "location": {"kind": "stack", "offset": 16},
                    "size": 4,
                    "offsets": [0],
                },
            }
        ],
    }


class TestHealth:
    def test_loaded(self, client):
        body = client.get("/v1/health").json()
        assert body == {"status": "ok", "model_loaded": True}

    def test_unloaded_returns_service_unavailable(self):
        bare = TestClient(create_app(None))
        assert bare.get("/v1/health").json()["model_loaded"] is False
        response = bare.post(
            "/v1/predict", json={"function": function_doc(), "beam_width": 1}
        )
        assert response.status_code == 503


class TestPredict:
    def test_zero_variables_is_success(self, client):
        doc = {"function": {"tokens": ["{", "}"], "variables": []}}
        response = client.post("/v1/predict", json=doc)
        assert response.status_code == 200
        assert response.json()["variables"] == []

    def test_identical_requests_identical_bodies(self, client):
        payload = {"function": function_doc(), "beam_width": 3}
        a = client.post("/v1/predict", json=payload)
        b = client.post("/v1/predict", json=payload)
        assert a.content == b.content

    def test_beam_width_bounds_candidates(self, client):
        response = client.post(
            "/v1/predict", json={"function": function_doc(), "beam_width": 5, "top_k": 5}
        )
        body = response.json()
        assert response.status_code == 200
        for variable in body["variables"]:
            assert len(variable["candidates"]) <= 5
            scores = [c["log_prob"] for c in variable["candidates"]]
            assert scores == sorted(scores, reverse=True)

    def test_layout_tokens_echoed(self, client):
        response = client.post("/v1/predict", json={"function": function_doc()})
        tokens = response.json()["variables"][0]["layout_tokens"]
        assert tokens == ["[Loc_S0x10]", "[Size_4]", "[Offset_0]"]

    def test_schema_violation_names_field(self, client):
        broken = {"function": {"tokens": ["x"], "variables": [{"occurrences": [0]}]}}
        response = client.post("/v1/predict", json=broken)
        assert response.status_code == 422
        assert "decompiler_name" in response.text

    def test_occurrence_mismatch_rejected(self, client):
        doc = function_doc()
        doc["variables"][0]["occurrences"] = [0]  # token 0 is "void", not v1
        response = client.post("/v1/predict", json={"function": doc})
        assert response.status_code == 422

    def test_truncation_warning(self, client, tiny_bundle):
        doc = function_doc()
        doc["tokens"] = doc["tokens"] + ["pad_tok"] * 200
        response = client.post("/v1/predict", json={"function": doc})
        assert response.status_code == 200
        assert any("truncated" in w for w in response.json()["warnings"])


class TestRefine:
    def test_empty_constraints_byte_identical_to_predict(self, client):
        payload = {"function": function_doc(), "beam_width": 3}
        predicted = client.post("/v1/predict", json=payload)
        refined = client.post("/v1/refine", json={**payload, "constraints": {}})
        assert predicted.content == refined.content

    def test_pinning_top1_type_keeps_downstream(self, client):
        payload = {"function": function_doc(), "beam_width": 3}
        baseline = client.post("/v1/predict", json=payload).json()
        top1 = baseline["variables"][0]["candidates"][0]
        refined = client.post(
            "/v1/refine",
            json={**payload, "constraints": {"0": {"type_id": top1["type_id"]}}},
        ).json()
        assert [c["name"] for c in refined["variables"][0]["candidates"]][0] == top1["name"]

    def test_pinning_rank2_type_reconditions_names(self, client):
        payload = {"function": function_doc(), "beam_width": 4, "top_k": 4}
        baseline = client.post("/v1/predict", json=payload).json()
        candidates = baseline["variables"][0]["candidates"]
        alternative = next(
            (c for c in candidates[1:] if c["type_id"] != candidates[0]["type_id"]),
            None,
        )
        assert alternative is not None, "fixture model produced a single type"
        refined = client.post(
            "/v1/refine",
            json={**payload, "constraints": {"0": {"type_id": alternative["type_id"]}}},
        ).json()
        assert all(
            c["type_id"] == alternative["type_id"]
            for c in refined["variables"][0]["candidates"]
        )

    def test_unknown_variable_index(self, client):
        response = client.post(
            "/v1/refine",
            json={"function": function_doc(), "constraints": {"7": {"type_id": 2}}},
        )
        assert response.status_code == 400

    def test_out_of_range_label(self, client):
        response = client.post(
            "/v1/refine",
            json={"function": function_doc(), "constraints": {"0": {"type_id": 10_000}}},
        )
        assert response.status_code == 400


class TestConcurrency:
    def test_concurrent_requests_match_serial(self, client):
        from concurrent.futures import ThreadPoolExecutor

        payload = {"function": function_doc(), "beam_width": 3}
        serial = client.post("/v1/predict", json=payload).content
        with ThreadPoolExecutor(max_workers=4) as pool:
            bodies = list(
                pool.map(lambda _: client.post("/v1/predict", json=payload).content, range(8))
            )
        assert all(body == serial for body in bodies)


class TestTypelibEndpoint:
    def test_entry(self, client, tiny_bundle):
        response = client.get("/v1/typelib/2")
        assert response.status_code == 200
        body = response.json()
        assert body["id"] == 2
        assert body["canonical"] == tiny_bundle.lib[2].canonical

    def test_unknown_id(self, client):
        assert client.get("/v1/typelib/9999").status_code == 404
