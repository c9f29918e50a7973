/**
 * Session state for one loaded function.
 *
 * The view is re-derived from the latest service response only; the
 * constraint map always mirrors exactly the analyst's pinned choices.
 * Pinning re-decodes through /v1/refine (or /v1/predict once the last pin
 * is removed); a failed request keeps the previous view and surfaces an
 * error banner instead.
 */

import {
  ApiClient,
  CandidateDoc,
  ConstraintMap,
  ConstraintSpec,
  FunctionDoc,
  PredictResponse,
} from "./api.js";

export interface SessionView {
  document: FunctionDoc | null;
  constraints: ConstraintMap;
  response: PredictResponse | null;
  error: string | null;
  loading: boolean;
}

export type Listener = (view: SessionView) => void;

function isAbort(error: unknown): boolean {
  return error instanceof DOMException && error.name === "AbortError";
}

export class Session {
  private view: SessionView = {
    document: null,
    constraints: {},
    response: null,
    error: null,
    loading: false,
  };
  private listeners: Listener[] = [];

  constructor(
    private client: ApiClient,
    private beamWidth = 5,
    private topK = 5,
  ) {}

  getView(): SessionView {
    return this.view;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(patch: Partial<SessionView>): void {
    this.view = { ...this.view, ...patch };
    for (const listener of this.listeners) listener(this.view);
  }

  async load(document: FunctionDoc): Promise<void> {
    this.emit({ document, constraints: {}, response: null, error: null, loading: true });
    try {
      const response = await this.client.predict(document, this.beamWidth, this.topK);
      this.emit({ response, loading: false });
    } catch (error) {
      if (isAbort(error)) return;
      this.emit({ error: String(error), loading: false });
    }
  }

  /** The candidate the listing currently shows for a variable. */
  chosen(index: number): CandidateDoc | null {
    const panel = this.view.response?.variables[index];
    return panel && panel.candidates.length > 0 ? panel.candidates[0] : null;
  }

  isPinned(index: number): boolean {
    return index in this.view.constraints;
  }

  async pinType(index: number, rank: number): Promise<void> {
    const candidate = this.candidateAt(index, rank);
    if (candidate?.type_id == null) return;
    await this.applyConstraint(index, { type_id: candidate.type_id });
  }

  async pinName(index: number, rank: number): Promise<void> {
    const candidate = this.candidateAt(index, rank);
    if (candidate?.name_id == null) return;
    await this.applyConstraint(index, { name_id: candidate.name_id });
  }

  async unpin(index: number): Promise<void> {
    const constraints: ConstraintMap = { ...this.view.constraints };
    delete constraints[index];
    await this.redecode(constraints);
  }

  private candidateAt(index: number, rank: number): CandidateDoc | null {
    const panel = this.view.response?.variables[index];
    if (!panel || rank < 0 || rank >= panel.candidates.length) return null;
    return panel.candidates[rank];
  }

  private async applyConstraint(index: number, spec: ConstraintSpec): Promise<void> {
    const constraints: ConstraintMap = {
      ...this.view.constraints,
      [index]: { ...this.view.constraints[index], ...spec },
    };
    await this.redecode(constraints);
  }

  private async redecode(constraints: ConstraintMap): Promise<void> {
    const document = this.view.document;
    if (!document) return;
    this.emit({ loading: true, error: null });
    try {
      const response =
        Object.keys(constraints).length > 0
          ? await this.client.refine(document, constraints, this.beamWidth, this.topK)
          : await this.client.predict(document, this.beamWidth, this.topK);
      this.emit({ constraints, response, loading: false });
    } catch (error) {
      if (isAbort(error)) return; // superseded by a newer pin
      this.emit({ error: String(error), loading: false });
    }
  }

  /**
   * The listing with chosen (pinned or top-1) names substituted, under a
   * declarations header carrying the chosen canonical types.
   */
  exportListing(): string {
    const { document, response } = this.view;
    if (!document) return "";
    const chosenName = new Map<number, string>();
    const declarations: string[] = [];
    document.variables.forEach((variable, index) => {
      const candidate = response ? this.chosen(index) : null;
      const name =
        candidate?.name && !candidate.name.startsWith("<")
          ? candidate.name
          : variable.decompiler_name;
      chosenName.set(index, name);
      const type = candidate?.type ?? variable.decompiler_type ?? "?";
      declarations.push(`${type} ${name};`);
    });
    const occurrenceOwner = new Map<number, number>();
    document.variables.forEach((variable, index) => {
      for (const position of variable.occurrences) occurrenceOwner.set(position, index);
    });
    const body = document.tokens
      .map((token, position) => {
        const owner = occurrenceOwner.get(position);
        return owner === undefined ? token : chosenName.get(owner) ?? token;
      })
      .reduce((text, token) => {
        const glue = text === "" ? "" : " ";
        const suffix = token === ";" || token === "{" || token === "}" ? "\n" : "";
        return text + glue + token + suffix;
      }, "");
    return declarations.join("\n") + "\n\n" + body;
  }
}
