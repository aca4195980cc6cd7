/**
 * UI session state machine, free of DOM and WebSocket concerns so it is
 * directly unit-testable.
 *
 * Two invariants govern everything here:
 *  - parameters are reported "active" only once a frame_meta echoed them;
 *    slider moves only ever touch the pending set;
 *  - at most one set_params is in flight; further adjustments coalesce into
 *    a queued payload flushed when the acknowledgement arrives.
 */

import {
  FramePayload,
  FrameMeta,
  MAX_WEIGHT_SUM,
  Params,
  ROLE_INPUT,
  ROLE_PROCESSED,
  ROLE_STABILIZED,
  SLIDER_SPECS,
  ServerMessage,
  SliderSpec,
  controlMessage,
  parseServerMessage,
  decodeFrameMessage,
  snapIterations,
  snapToStep,
} from "./protocol.js";

export interface Transport {
  send(text: string): void;
}

export type ConnectionState = "idle" | "connecting" | "open" | "closed" | "error";

export interface Triplet {
  index: number;
  input?: Uint8Array;
  processed?: Uint8Array;
  stabilized?: Uint8Array;
}

export function tripletComplete(t: Triplet | null): boolean {
  return !!t && !!t.input && !!t.processed && !!t.stabilized;
}

export type AdjustableParam = "k1" | "k2" | "alpha" | "lambda" | "iterations";

export class UiSessionModel {
  connection: ConnectionState = "idle";
  lastError: string | null = null;
  warning: string | null = null;

  sources: string[] = [];
  presets: string[] = [];
  sourceName: string | null = null;
  frameCount = 0;

  /** Params confirmed by the last frame_meta echo; the only set the UI may
   * present as active. */
  activeParams: Params | null = null;
  activePreset: string | null = null;
  /** Params sent (or acknowledged) but not yet echoed by a frame. */
  pendingParams: Params | null = null;
  /** Local slider positions; mirror pending, never active. */
  sliders: Params | null = null;

  playing = false;
  ended = false;
  currentIndex = 0;
  timing: { flow: number; solve: number } | null = null;

  private displayed: Triplet | null = null;
  private assembling: Triplet | null = null;
  private inflightSetParams = false;
  private queuedSetParams: Partial<Params> | null = null;
  private listeners: Array<() => void> = [];

  constructor(private transport: Transport) {}

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  /** Current complete triplet for rendering; panes always share one index. */
  get triplet(): Triplet | null {
    return this.displayed;
  }

  // -- transport lifecycle ---------------------------------------------

  markConnecting(): void {
    this.connection = "connecting";
    this.lastError = null;
    this.notify();
  }

  markOpen(): void {
    this.connection = "open";
    this.notify();
  }

  markClosed(reason?: string): void {
    this.connection = reason ? "error" : "closed";
    this.lastError = reason ?? this.lastError;
    this.playing = false;
    this.inflightSetParams = false;
    this.queuedSetParams = null;
    this.notify();
  }

  // -- incoming messages ------------------------------------------------

  onText(text: string): void {
    let message: ServerMessage;
    try {
      message = parseServerMessage(text);
    } catch {
      this.lastError = "malformed message from server";
      this.notify();
      return;
    }
    switch (message.kind) {
      case "hello":
        this.sources = message.sources;
        this.presets = message.presets;
        this.pendingParams = { ...message.params };
        this.sliders = { ...message.params };
        break;
      case "ack":
        this.onAck(message.for, message);
        break;
      case "error":
        this.lastError = message.message;
        // a rejected set_params leaves server state unchanged; unblock the
        // pipeline so corrected values can be sent
        if (message.for === "set_params") {
          this.inflightSetParams = false;
          this.flushQueued();
        }
        break;
      case "frame_meta":
        this.onFrameMeta(message);
        break;
      case "end_of_stream":
        this.playing = false;
        this.ended = true;
        break;
    }
    this.notify();
  }

  onBinary(data: ArrayBuffer): void {
    let payload: FramePayload;
    try {
      payload = decodeFrameMessage(data);
    } catch (err) {
      this.lastError = String(err);
      this.notify();
      return;
    }
    if (!this.assembling || this.assembling.index !== payload.index) {
      this.assembling = { index: payload.index };
    }
    if (payload.role === ROLE_INPUT) this.assembling.input = payload.png;
    else if (payload.role === ROLE_PROCESSED) this.assembling.processed = payload.png;
    else if (payload.role === ROLE_STABILIZED) this.assembling.stabilized = payload.png;
    if (tripletComplete(this.assembling)) {
      // panes switch together: only a complete triplet is ever displayed
      this.displayed = this.assembling;
      this.currentIndex = this.assembling.index;
      this.assembling = null;
    }
    this.notify();
  }

  private onAck(kind: string, ack: { params?: Params; preset?: string; frames?: number; source?: string; playing?: boolean; frame?: number }): void {
    switch (kind) {
      case "select_source":
        this.sourceName = ack.source ?? null;
        this.frameCount = ack.frames ?? 0;
        this.playing = false;
        this.ended = false;
        break;
      case "set_params":
        if (ack.params) {
          this.pendingParams = { ...ack.params };
          this.sliders = { ...ack.params };
        }
        this.inflightSetParams = false;
        this.flushQueued();
        break;
      case "set_preset":
        if (ack.params) {
          this.pendingParams = { ...ack.params };
          this.sliders = { ...ack.params };
        }
        break;
      case "play":
        this.playing = ack.playing ?? true;
        break;
      case "pause":
        this.playing = false;
        break;
      case "seek":
        this.ended = false;
        break;
    }
  }

  private onFrameMeta(meta: FrameMeta): void {
    this.activeParams = { ...meta.params };
    this.activePreset = meta.preset;
    this.timing = { ...meta.timing_ms };
    if (this.pendingParams && paramsEqual(this.pendingParams, meta.params)) {
      this.pendingParams = null;
    }
  }

  /** True while a sent parameter change has not yet been echoed by a frame. */
  get paramsPending(): boolean {
    return this.pendingParams !== null || this.inflightSetParams || this.queuedSetParams !== null;
  }

  // -- user actions -------------------------------------------------------

  selectSource(name: string): void {
    this.transport.send(controlMessage("select_source", { source: name }));
  }

  play(): void {
    this.transport.send(controlMessage("play"));
  }

  pause(): void {
    this.transport.send(controlMessage("pause"));
  }

  setPreset(name: string): void {
    this.transport.send(controlMessage("set_preset", { preset: name }));
  }

  /**
   * Move one slider. The value is snapped to the slider grid, the combined
   * k1 + k2 bound is enforced by clamping (with a visible warning), and the
   * resulting set_params is sent, or queued if one is already in flight.
   */
  adjust(param: AdjustableParam, value: number): void {
    if (!this.sliders) return;
    this.warning = null;
    let snapped: number;
    if (param === "iterations") {
      snapped = snapIterations(value);
    } else {
      const spec = SLIDER_SPECS.find((s) => s.id === param) as SliderSpec;
      snapped = snapToStep(value, spec);
      if (param === "k1" || param === "k2") {
        const other = param === "k1" ? this.sliders.k2 : this.sliders.k1;
        if (snapped + other > MAX_WEIGHT_SUM) {
          snapped = snapToStep(MAX_WEIGHT_SUM - other, spec);
          this.warning = "k1 + k2 must stay below 1; value clamped";
        }
      }
    }
    if (this.sliders[param] === snapped && !this.warning) {
      this.notify();
      return;
    }
    this.sliders = { ...this.sliders, [param]: snapped };
    this.sendParams({ [param]: snapped });
    this.notify();
  }

  private sendParams(payload: Partial<Params>): void {
    if (this.inflightSetParams) {
      this.queuedSetParams = { ...this.queuedSetParams, ...payload };
      return;
    }
    this.inflightSetParams = true;
    this.transport.send(controlMessage("set_params", payload));
  }

  private flushQueued(): void {
    if (this.queuedSetParams && !this.inflightSetParams) {
      const payload = this.queuedSetParams;
      this.queuedSetParams = null;
      this.inflightSetParams = true;
      this.transport.send(controlMessage("set_params", payload));
    }
  }

  /**
   * Seek to a 1-based frame index. Playback pauses first; the index is
   * clamped below to 1 and refused above the source length.
   */
  scrub(index: number): void {
    if (this.frameCount === 0) return;
    const target = Math.max(1, Math.round(index));
    if (target > this.frameCount) {
      this.warning = `frame ${target} is past the end (${this.frameCount} frames)`;
      this.notify();
      return;
    }
    if (this.playing) {
      this.pause();
    }
    this.transport.send(controlMessage("seek", { frame: target }));
    this.notify();
  }
}

function paramsEqual(a: Params, b: Params): boolean {
  return (
    a.k1 === b.k1 &&
    a.k2 === b.k2 &&
    a.alpha === b.alpha &&
    a.lambda === b.lambda &&
    a.eta === b.eta &&
    a.kappa === b.kappa &&
    a.iterations === b.iterations &&
    a.flow_downscale === b.flow_downscale
  );
}
