/** DOM wiring: connects the session model to panes, sliders and transport. */

import { UiSessionModel, tripletComplete } from "./model.js";
import { ITERATION_CHOICES, SLIDER_SPECS } from "./protocol.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const addressInput = el<HTMLInputElement>("address");
const connectButton = el<HTMLButtonElement>("connect");
const banner = el<HTMLDivElement>("banner");
const sourceSelect = el<HTMLSelectElement>("source");
const playButton = el<HTMLButtonElement>("play");
const pauseButton = el<HTMLButtonElement>("pause");
const scrubber = el<HTMLInputElement>("scrubber");
const frameLabel = el<HTMLSpanElement>("frame-label");
const overlay = el<HTMLSpanElement>("overlay");
const pendingBadge = el<HTMLSpanElement>("pending");
const warningLabel = el<HTMLSpanElement>("warning");
const sliderBox = el<HTMLDivElement>("sliders");
const presetBox = el<HTMLDivElement>("presets");
const panes: Record<string, HTMLImageElement> = {
  input: el<HTMLImageElement>("pane-input"),
  processed: el<HTMLImageElement>("pane-processed"),
  stabilized: el<HTMLImageElement>("pane-stabilized"),
};

let socket: WebSocket | null = null;
const model = new UiSessionModel({
  send: (text) => {
    if (socket && socket.readyState === WebSocket.OPEN) socket.send(text);
  },
});

function defaultAddress(): string {
  const host = location.host || "127.0.0.1:8787";
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  return `${scheme}://${host}/session`;
}
addressInput.value = defaultAddress();

function connect(): void {
  socket?.close();
  model.markConnecting();
  try {
    socket = new WebSocket(addressInput.value);
  } catch (err) {
    model.markClosed(String(err));
    return;
  }
  socket.binaryType = "arraybuffer";
  socket.onopen = () => model.markOpen();
  socket.onmessage = (event) => {
    if (typeof event.data === "string") model.onText(event.data);
    else model.onBinary(event.data as ArrayBuffer);
  };
  socket.onerror = () => model.markClosed("connection failed");
  socket.onclose = () => {
    if (model.connection !== "error") model.markClosed();
  };
}
connectButton.onclick = connect;

sourceSelect.onchange = () => {
  if (sourceSelect.value) model.selectSource(sourceSelect.value);
};
playButton.onclick = () => model.play();
pauseButton.onclick = () => model.pause();
scrubber.onchange = () => model.scrub(Number(scrubber.value));

interface SliderWiring {
  input: HTMLInputElement;
  value: HTMLSpanElement;
  id: string;
}
const sliderWirings: SliderWiring[] = [];

for (const spec of SLIDER_SPECS) {
  const row = document.createElement("label");
  row.className = "slider-row";
  const name = document.createElement("span");
  name.textContent = spec.label;
  const input = document.createElement("input");
  input.type = "range";
  input.min = String(spec.min);
  input.max = String(spec.max);
  input.step = String(spec.step);
  const value = document.createElement("span");
  value.className = "slider-value";
  input.oninput = () => model.adjust(spec.id, Number(input.value));
  row.append(name, input, value);
  sliderBox.append(row);
  sliderWirings.push({ input, value, id: spec.id });
}

{
  const row = document.createElement("label");
  row.className = "slider-row";
  const name = document.createElement("span");
  name.textContent = "iterations";
  const input = document.createElement("input");
  input.type = "range";
  input.min = "0";
  input.max = String(ITERATION_CHOICES.length - 1);
  input.step = "1";
  const value = document.createElement("span");
  value.className = "slider-value";
  input.oninput = () => model.adjust("iterations", ITERATION_CHOICES[Number(input.value)]);
  row.append(name, input, value);
  sliderBox.append(row);
  sliderWirings.push({ input, value, id: "iterations" });
}

const objectUrls: Record<string, string> = {};

function renderPane(name: keyof typeof panes, png: Uint8Array | undefined): void {
  if (!png) return;
  const blob = new Blob([png as BlobPart], { type: "image/png" });
  const url = URL.createObjectURL(blob);
  const previous = objectUrls[name];
  panes[name].src = url;
  objectUrls[name] = url;
  if (previous) URL.revokeObjectURL(previous);
}

function render(): void {
  banner.textContent =
    model.connection === "error"
      ? `connection error: ${model.lastError ?? "unknown"} (press connect to retry)`
      : model.connection === "closed"
        ? "disconnected (press connect for a fresh session)"
        : model.lastError ?? "";
  banner.classList.toggle("visible", banner.textContent !== "");

  if (sourceSelect.options.length !== model.sources.length + 1) {
    sourceSelect.innerHTML = "";
    sourceSelect.append(new Option("select source...", ""));
    for (const name of model.sources) sourceSelect.append(new Option(name, name));
  }

  if (presetBox.childElementCount !== model.presets.length) {
    presetBox.innerHTML = "";
    for (const name of model.presets) {
      const button = document.createElement("button");
      button.textContent = name;
      button.onclick = () => model.setPreset(name);
      presetBox.append(button);
    }
  }

  const triplet = model.triplet;
  if (tripletComplete(triplet)) {
    renderPane("input", triplet!.input);
    renderPane("processed", triplet!.processed);
    renderPane("stabilized", triplet!.stabilized);
    frameLabel.textContent = `frame ${triplet!.index} / ${model.frameCount}`;
    scrubber.max = String(Math.max(1, model.frameCount));
    scrubber.value = String(triplet!.index);
  }

  // the overlay only ever shows echoed parameters
  if (model.activeParams) {
    const p = model.activeParams;
    const timing = model.timing ? ` | flow ${model.timing.flow}ms solve ${model.timing.solve}ms` : "";
    overlay.textContent =
      `k1=${p.k1} k2=${p.k2} alpha=${p.alpha} lambda=${p.lambda} ` +
      `iters=${p.iterations} downscale=${p.flow_downscale}` +
      (model.activePreset ? ` (${model.activePreset})` : "") +
      timing;
  } else {
    overlay.textContent = "no frame received yet";
  }
  pendingBadge.classList.toggle("visible", model.paramsPending);
  warningLabel.textContent = model.warning ?? "";

  if (model.sliders) {
    for (const wiring of sliderWirings) {
      const value = model.sliders[wiring.id as keyof typeof model.sliders] as number;
      if (wiring.id === "iterations") {
        wiring.input.value = String(Math.max(0, ITERATION_CHOICES.indexOf(value)));
      } else if (document.activeElement !== wiring.input) {
        wiring.input.value = String(value);
      }
      wiring.value.textContent = String(value);
    }
  }
  playButton.disabled = model.playing || model.connection !== "open";
  pauseButton.disabled = !model.playing;
}

model.subscribe(render);
render();
connect();
