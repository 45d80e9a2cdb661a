import { ApiClient } from "./api.js";
import { FpsTracker } from "./fps.js";
import { CanvasRenderer } from "./render.js";
import {
  PanelState,
  UNSTYLED,
  applyAcknowledged,
  applyRejection,
  initialPanel,
  selectStyle,
  selectionEntries,
} from "./state.js";
import { StreamClient } from "./stream.js";
import { ClassInfo, ConnectionStatus, StyleInfo } from "./types.js";

const api = new ApiClient();
const fpsTracker = new FpsTracker(30);

let panel: PanelState = initialPanel();
let classes: ClassInfo[] = [];
let styles: StyleInfo[] = [];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function renderStatus(status: ConnectionStatus): void {
  const badge = el<HTMLSpanElement>("status");
  badge.textContent = status;
  badge.className = `badge ${status}`;
}

function renderStats(renderer: CanvasRenderer): void {
  el("fps").textContent = fpsTracker.fps().toFixed(1);
  el("errors").textContent = String(renderer.decodeErrors);
}

function renderPanel(): void {
  const rows = el<HTMLTableSectionElement>("assignment-rows");
  rows.textContent = "";
  for (const cls of classes) {
    const row = document.createElement("tr");

    const name = document.createElement("td");
    name.textContent = `${cls.name} (#${cls.id})`;
    row.appendChild(name);

    const active = document.createElement("td");
    const acknowledged = panel.acknowledged[String(cls.id)];
    active.textContent = acknowledged ?? "unstyled";
    active.className = acknowledged ? "active-style" : "active-none";
    row.appendChild(active);

    const picker = document.createElement("td");
    const select = document.createElement("select");
    select.dataset.classId = String(cls.id);
    const none = document.createElement("option");
    none.value = UNSTYLED;
    none.textContent = "unstyled";
    select.appendChild(none);
    for (const style of styles) {
      const option = document.createElement("option");
      option.value = style.id;
      option.textContent = style.id;
      select.appendChild(option);
    }
    select.value = panel.selection[String(cls.id)] ?? acknowledged ?? UNSTYLED;
    select.onchange = () => {
      panel = selectStyle(panel, cls.id, select.value);
    };
    picker.appendChild(select);
    row.appendChild(picker);

    rows.appendChild(row);
  }
  el("panel-error").textContent = panel.lastError ?? "";
}

function renderStyleShelf(): void {
  const shelf = el<HTMLDivElement>("styles");
  shelf.textContent = "";
  for (const style of styles) {
    const card = document.createElement("figure");
    const img = document.createElement("img");
    img.src = style.thumbnail;
    img.alt = style.id;
    const caption = document.createElement("figcaption");
    caption.textContent = style.id;
    card.appendChild(img);
    card.appendChild(caption);
    shelf.appendChild(card);
  }
}

async function applySelection(): Promise<void> {
  // seed the selection with acknowledged values for untouched classes
  for (const cls of classes) {
    const key = String(cls.id);
    if (!(key in panel.selection)) {
      panel = selectStyle(panel, cls.id, panel.acknowledged[key] ?? UNSTYLED);
    }
  }
  const result = await api.putAssignment(selectionEntries(panel));
  if (result.ok) {
    panel = applyAcknowledged(panel, result.entries);
  } else {
    panel = applyRejection(panel, result.detail, result.offending);
  }
  renderPanel();
}

async function bootstrap(): Promise<void> {
  classes = await api.classes();
  styles = await api.styles();
  panel = applyAcknowledged(panel, await api.assignment());
  renderStyleShelf();
  renderPanel();

  const renderer = new CanvasRenderer(el<HTMLCanvasElement>("view"));
  const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/stream`;
  const client = new StreamClient(
    wsUrl,
    {
      onFrame: (data) => {
        void renderer.draw(data);
        el("last-frame").textContent = new Date().toLocaleTimeString();
      },
      onTiming: (timing) => {
        fpsTracker.record(timing.interval_ms);
        renderStats(renderer);
      },
      onStatus: renderStatus,
    },
    (url) => new WebSocket(url),
  );
  client.start();

  el<HTMLButtonElement>("apply").onclick = () => {
    void applySelection();
  };
}

bootstrap().catch((err) => {
  el("panel-error").textContent = String(err);
  console.error(err);
});
