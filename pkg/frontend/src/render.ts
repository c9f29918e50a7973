/** HTML rendering for the code pane and the per-variable candidate panels. */

import { FunctionDoc, PredictResponse } from "./api.js";
import { SessionView } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** The token stream with every variable occurrence wrapped and highlighted. */
export function renderListing(document: FunctionDoc): string {
  const owner = new Map<number, number>();
  document.variables.forEach((variable, index) => {
    for (const position of variable.occurrences) owner.set(position, index);
  });
  const parts = document.tokens.map((token, position) => {
    const variable = owner.get(position);
    const text = escapeHtml(token);
    if (variable === undefined) return `<span class="tok">${text}</span>`;
    return `<span class="tok var var-${variable}" data-var="${variable}">${text}</span>`;
  });
  return parts.join(" ");
}

export function renderWarnings(response: PredictResponse | null): string {
  if (!response || response.warnings.length === 0) return "";
  const items = response.warnings.map((w) => `<li>${escapeHtml(w)}</li>`).join("");
  return `<ul class="warnings">${items}</ul>`;
}

/** One panel per variable: candidates, layout tokens, pin/unpin controls. */
export function renderPanels(view: SessionView): string {
  const { document, response } = view;
  if (!document) return "";
  const panels = document.variables.map((variable, index) => {
    const panel = response?.variables[index];
    const pinned = index in view.constraints;
    const lock = pinned ? ' <span class="lock" title="pinned">&#128274;</span>' : "";
    const header =
      `<h3>${escapeHtml(variable.decompiler_name)}${lock}</h3>` +
      `<div class="layout">${(panel?.layout_tokens ?? [])
        .map((t) => `<code>${escapeHtml(t)}</code>`)
        .join(" ")}</div>`;
    if (panel?.truncated_out) {
      return `<section class="panel" data-var="${index}">${header}` +
        `<p class="muted">not predictable (outside the encoded window)</p></section>`;
    }
    const rows = (panel?.candidates ?? [])
      .map((candidate, rank) => {
        const type = escapeHtml(candidate.type ?? "?");
        const name = escapeHtml(candidate.name ?? "?");
        return (
          `<tr><td>${rank + 1}</td><td><code>${type}</code></td><td>${name}</td>` +
          `<td>${candidate.log_prob.toFixed(2)}</td>` +
          `<td><button data-action="pin-type" data-var="${index}" data-rank="${rank}">pin type</button>` +
          `<button data-action="pin-name" data-var="${index}" data-rank="${rank}">pin name</button></td></tr>`
        );
      })
      .join("");
    const unpin = pinned
      ? `<button data-action="unpin" data-var="${index}">unpin</button>`
      : "";
    return (
      `<section class="panel" data-var="${index}">${header}` +
      `<table><thead><tr><th>#</th><th>type</th><th>name</th><th>logp</th><th></th></tr></thead>` +
      `<tbody>${rows}</tbody></table>${unpin}</section>`
    );
  });
  return panels.join("");
}
