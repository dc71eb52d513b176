import type { HierarchyNode } from "./hierarchy.js";
import type { SessionStore } from "./session.js";
import type { EventFrame } from "./types.js";

const INDENT_PX = 16;
const TOOL_KINDS = new Set(["tool_call", "tool_result"]);

/** One list item per agent; left padding mirrors the node's level exactly. */
export function renderHierarchy(nodes: HierarchyNode[], container: HTMLElement): void {
  container.textContent = "";
  const list = document.createElement("ul");
  list.className = "hierarchy";
  for (const node of nodes) {
    const item = document.createElement("li");
    item.textContent = `[${node.tag}] ${node.name}`;
    item.style.paddingLeft = `${node.level * INDENT_PX}px`;
    item.dataset.level = String(node.level);
    item.dataset.agent = node.name;
    list.appendChild(item);
  }
  container.appendChild(list);
}

function payloadElement(frame: EventFrame): HTMLElement {
  const pretty = JSON.stringify(frame.payload, null, 2);
  if (TOOL_KINDS.has(frame.kind)) {
    // tool payloads can be huge; keep them behind a native disclosure
    const details = document.createElement("details");
    const summary = document.createElement("summary");
    const tool = typeof frame.payload.tool === "string" ? frame.payload.tool : "payload";
    summary.textContent = tool;
    details.appendChild(summary);
    const pre = document.createElement("pre");
    pre.textContent = pretty;
    details.appendChild(pre);
    return details;
  }
  const pre = document.createElement("pre");
  pre.className = "payload";
  pre.textContent = pretty;
  return pre;
}

export function renderFrames(frames: EventFrame[], container: HTMLElement): void {
  container.textContent = "";
  for (const frame of frames) {
    const row = document.createElement("div");
    row.className = "frame";
    row.dataset.seq = String(frame.seq);
    row.dataset.kind = frame.kind;
    row.dataset.agent = frame.agent;
    const head = document.createElement("span");
    head.className = "frame-head";
    head.textContent = `[${frame.seq}] ${frame.agent}/${frame.kind}`;
    row.appendChild(head);
    row.appendChild(payloadElement(frame));
    container.appendChild(row);
  }
}

export function renderBanners(store: SessionStore, container: HTMLElement): void {
  container.textContent = "";
  for (const banner of store.banners) {
    const div = document.createElement("div");
    div.className = `banner banner-${banner.kind}`;
    div.textContent = banner.text;
    container.appendChild(div);
  }
}

export function renderComposer(store: SessionStore, container: HTMLElement): void {
  container.textContent = "";
  const input = document.createElement("input");
  input.type = "text";
  input.placeholder = store.composerEnabled
    ? "message the supervisor"
    : `waiting (${store.status?.status ?? "connecting"})`;
  input.disabled = !store.composerEnabled;
  const button = document.createElement("button");
  button.textContent = "send";
  button.disabled = !store.composerEnabled;
  button.addEventListener("click", () => {
    const text = input.value.trim();
    if (!text) return;
    input.value = "";
    void store.send(text);
  });
  container.appendChild(input);
  container.appendChild(button);
}

export function renderMemoryPanel(store: SessionStore, container: HTMLElement): void {
  container.textContent = "";
  const picker = document.createElement("select");
  for (const name of ["user", ...store.hierarchy.map((node) => node.name)]) {
    const option = document.createElement("option");
    option.value = name;
    option.textContent = name;
    picker.appendChild(option);
  }
  if (store.memoryPanel) picker.value = store.memoryPanel.agent;
  picker.addEventListener("change", () => void store.inspectMemory(picker.value));
  container.appendChild(picker);
  const records = document.createElement("div");
  records.className = "memory-records";
  if (store.memoryPanel) renderFrames(store.memoryPanel.records, records);
  container.appendChild(records);
}

/** Wire the whole console into a root element and keep it in sync. */
export function mountConsole(store: SessionStore, root: HTMLElement): void {
  root.textContent = "";
  const sections: Record<string, HTMLElement> = {};
  for (const name of ["banners", "hierarchy", "frames", "composer", "memory"]) {
    const section = document.createElement("section");
    section.className = name;
    root.appendChild(section);
    sections[name] = section;
  }
  const rerender = () => {
    renderBanners(store, sections.banners);
    renderHierarchy(store.hierarchy, sections.hierarchy);
    renderFrames(store.frames, sections.frames);
    renderComposer(store, sections.composer);
    renderMemoryPanel(store, sections.memory);
  };
  store.subscribe(rerender);
  rerender();
}
