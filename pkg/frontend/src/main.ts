/** DOM wiring; everything stateful lives in Session. */

import { ApiClient, FunctionDoc } from "./api.js";
import { renderListing, renderPanels, renderWarnings } from "./render.js";
import { Session } from "./state.js";

const EXAMPLE: FunctionDoc = {
  binary_id: "demo",
  function_id: "demo_fn",
  tokens: [
    "void", "demo", "(", ")", "{",
    "v1", "=", "42", ";",
    "if", "(", "v1", ">", "7", ")", "{", "v1", "=", "0", ";", "}",
    "}",
  ],
  variables: [
    {
      decompiler_name: "v1",
      occurrences: [5, 11, 16],
      layout: { location: { kind: "stack", offset: 16 }, size: 4, offsets: [0] },
    },
  ],
};

function element<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

function boot(): void {
  const baseUrl = element<HTMLInputElement>("base-url");
  const input = element<HTMLTextAreaElement>("function-json");
  const listing = element<HTMLElement>("listing");
  const panels = element<HTMLElement>("panels");
  const banner = element<HTMLElement>("banner");
  const exported = element<HTMLTextAreaElement>("exported");
  input.value = JSON.stringify(EXAMPLE, null, 2);

  let session = new Session(new ApiClient(baseUrl.value));

  function redraw(): void {
    const view = session.getView();
    banner.textContent = view.error ?? (view.loading ? "decoding..." : "");
    banner.className = view.error ? "banner error" : "banner";
    listing.innerHTML = view.document ? renderListing(view.document) : "";
    panels.innerHTML = renderPanels(view) + renderWarnings(view.response);
  }

  function connect(): void {
    session = new Session(new ApiClient(baseUrl.value));
    session.subscribe(redraw);
  }
  connect();

  element<HTMLButtonElement>("load").addEventListener("click", () => {
    let doc: FunctionDoc;
    try {
      doc = JSON.parse(input.value) as FunctionDoc;
    } catch (error) {
      banner.textContent = `invalid JSON: ${error}`;
      banner.className = "banner error";
      return;
    }
    void session.load(doc);
  });

  baseUrl.addEventListener("change", connect);

  panels.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const action = target.dataset.action;
    if (!action) return;
    const variable = Number(target.dataset.var);
    const rank = Number(target.dataset.rank ?? -1);
    if (action === "pin-type") void session.pinType(variable, rank);
    else if (action === "pin-name") void session.pinName(variable, rank);
    else if (action === "unpin") void session.unpin(variable);
  });

  element<HTMLButtonElement>("export").addEventListener("click", () => {
    exported.value = session.exportListing();
  });
}

boot();
