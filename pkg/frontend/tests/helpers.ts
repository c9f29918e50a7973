/** Deterministic fake service used by the state and api tests. */

import { ConstraintMap, FetchLike, FunctionDoc, PredictResponse } from "../src/api.js";

export const DOC: FunctionDoc = {
  binary_id: "b",
  function_id: "f",
  tokens: ["void", "demo", "(", ")", "{", "v1", "=", "42", ";", "v1", "=", "0", ";", "}"],
  variables: [
    {
      decompiler_name: "v1",
      occurrences: [5, 9],
      layout: { location: { kind: "stack", offset: 16 }, size: 4, offsets: [0] },
    },
  ],
};

export const UNCONSTRAINED: PredictResponse = {
  variables: [
    {
      index: 0,
      decompiler_name: "v1",
      layout_tokens: ["[Loc_S0x10]", "[Size_4]", "[Offset_0]"],
      truncated_out: false,
      candidates: [
        { type_id: 3, type: "int", name_id: 7, name: "count", log_prob: -0.2 },
        { type_id: 5, type: "float", name_id: 8, name: "x", log_prob: -1.1 },
        { type_id: 3, type: "int", name_id: 9, name: "idx", log_prob: -1.9 },
      ],
    },
  ],
  warnings: [],
};

/** Re-conditioned candidates once the rank-2 type (float) is pinned. */
export const PINNED_FLOAT: PredictResponse = {
  variables: [
    {
      index: 0,
      decompiler_name: "v1",
      layout_tokens: ["[Loc_S0x10]", "[Size_4]", "[Offset_0]"],
      truncated_out: false,
      candidates: [
        { type_id: 5, type: "float", name_id: 8, name: "x", log_prob: -0.4 },
        { type_id: 5, type: "float", name_id: 11, name: "ratio", log_prob: -0.9 },
      ],
    },
  ],
  warnings: [],
};

export interface FakeService {
  fetchFn: FetchLike;
  calls: { path: string; body: any }[];
  pathCount(path: string): number;
}

export function fakeService(): FakeService {
  const calls: { path: string; body: any }[] = [];
  const fetchFn: FetchLike = async (url, init) => {
    const path = new URL(url).pathname;
    const body = init.body ? JSON.parse(init.body as string) : undefined;
    calls.push({ path, body });
    if (path === "/v1/predict") return json(UNCONSTRAINED);
    if (path === "/v1/refine") {
      const constraints: ConstraintMap = body.constraints ?? {};
      const pinned = constraints[0];
      if (pinned?.type_id === 5) return json(PINNED_FLOAT);
      return json(UNCONSTRAINED); // pinning the current top-1 changes nothing
    }
    return json({ detail: "no such route" }, 404);
  };
  return {
    fetchFn,
    calls,
    pathCount: (path) => calls.filter((c) => c.path === path).length,
  };
}

export function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
