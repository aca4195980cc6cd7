import { beforeEach, describe, expect, it } from "vitest";

import { UiSessionModel } from "../src/model.js";
import {
  Params,
  ROLE_INPUT,
  ROLE_PROCESSED,
  ROLE_STABILIZED,
  encodeFrameMessage,
} from "../src/protocol.js";

const DEFAULTS: Params = {
  k1: 0.3,
  k2: 0.5,
  alpha: 6500,
  lambda: 2.0,
  eta: 0.15,
  kappa: 0.2,
  iterations: 150,
  flow_downscale: 1,
};

class FakeTransport {
  sent: Array<{ kind: string; payload?: Record<string, unknown> }> = [];
  send(text: string): void {
    this.sent.push(JSON.parse(text));
  }
  ofKind(kind: string) {
    return this.sent.filter((m) => m.kind === kind);
  }
}

function hello(model: UiSessionModel, params: Params = DEFAULTS): void {
  model.onText(
    JSON.stringify({
      kind: "hello",
      sources: ["demo"],
      presets: ["default", "fast", "objective"],
      params,
    }),
  );
}

function frameMeta(model: UiSessionModel, index: number, params: Params, preset: string | null = null): void {
  model.onText(
    JSON.stringify({
      kind: "frame_meta",
      index,
      params,
      preset,
      timing_ms: { flow: 5, solve: 9 },
    }),
  );
}

function binaryTriplet(model: UiSessionModel, index: number): void {
  for (const role of [ROLE_INPUT, ROLE_PROCESSED, ROLE_STABILIZED] as const) {
    model.onBinary(
      encodeFrameMessage({ index, role, png: new Uint8Array([role, index]) }),
    );
  }
}

function openSource(model: UiSessionModel, transport: FakeTransport, frames = 5): void {
  hello(model);
  model.selectSource("demo");
  model.onText(
    JSON.stringify({ kind: "ack", for: "select_source", source: "demo", frames }),
  );
  frameMeta(model, 1, DEFAULTS);
  binaryTriplet(model, 1);
}

describe("echo discipline", () => {
  let transport: FakeTransport;
  let model: UiSessionModel;

  beforeEach(() => {
    transport = new FakeTransport();
    model = new UiSessionModel(transport);
    openSource(model, transport);
  });

  it("never reports slider values as active before a frame echo", () => {
    expect(model.activeParams!.lambda).toBe(2.0);
    model.adjust("lambda", 0.5);
    // sent, but still pending: the active set is untouched
    expect(transport.ofKind("set_params")).toHaveLength(1);
    expect(model.activeParams!.lambda).toBe(2.0);
    expect(model.paramsPending).toBe(true);
    model.onText(
      JSON.stringify({ kind: "ack", for: "set_params", params: { ...DEFAULTS, lambda: 0.5 } }),
    );
    expect(model.activeParams!.lambda).toBe(2.0);
    expect(model.paramsPending).toBe(true);
    // the echoing frame finally activates the new set
    frameMeta(model, 2, { ...DEFAULTS, lambda: 0.5 });
    expect(model.activeParams!.lambda).toBe(0.5);
    expect(model.paramsPending).toBe(false);
  });

  it("keeps the pending badge while an unrelated older frame echoes", () => {
    model.adjust("lambda", 0.5);
    model.onText(
      JSON.stringify({ kind: "ack", for: "set_params", params: { ...DEFAULTS, lambda: 0.5 } }),
    );
    frameMeta(model, 2, DEFAULTS); // frame solved before the change landed
    expect(model.activeParams!.lambda).toBe(2.0);
    expect(model.paramsPending).toBe(true);
  });

  it("activates preset parameters only via the echo", () => {
    model.setPreset("fast");
    model.onText(
      JSON.stringify({
        kind: "ack",
        for: "set_preset",
        preset: "fast",
        params: { ...DEFAULTS, iterations: 50, flow_downscale: 2 },
      }),
    );
    // sliders show the pending preset (iterations readout 50)...
    expect(model.sliders!.iterations).toBe(50);
    // ...but the active set still awaits a frame echo
    expect(model.activeParams!.iterations).toBe(150);
    frameMeta(model, 2, { ...DEFAULTS, iterations: 50, flow_downscale: 2 }, "fast");
    expect(model.activeParams!.iterations).toBe(50);
    expect(model.activePreset).toBe("fast");
  });
});

describe("set_params coalescing", () => {
  it("keeps at most one in-flight message and merges queued drags", () => {
    const transport = new FakeTransport();
    const model = new UiSessionModel(transport);
    openSource(model, transport);
    model.adjust("lambda", 0.5);
    model.adjust("lambda", 1.0);
    model.adjust("k1", 0.4);
    expect(transport.ofKind("set_params")).toHaveLength(1);
    model.onText(
      JSON.stringify({ kind: "ack", for: "set_params", params: { ...DEFAULTS, lambda: 0.5 } }),
    );
    const sent = transport.ofKind("set_params");
    expect(sent).toHaveLength(2);
    expect(sent[1].payload).toEqual({ lambda: 1.0, k1: 0.4 });
  });

  it("unblocks after a rejected set_params", () => {
    const transport = new FakeTransport();
    const model = new UiSessionModel(transport);
    openSource(model, transport);
    model.adjust("lambda", 0.5);
    model.onText(
      JSON.stringify({ kind: "error", for: "set_params", message: "k1+k2 must be < 1" }),
    );
    expect(model.lastError).toContain("k1+k2");
    model.adjust("lambda", 1.0);
    expect(transport.ofKind("set_params")).toHaveLength(2);
  });
});

describe("slider validation", () => {
  it("clamps k1 so k1 + k2 stays below 1 and warns", () => {
    const transport = new FakeTransport();
    const model = new UiSessionModel(transport);
    openSource(model, transport);
    model.adjust("k1", 0.9); // k2 is 0.5
    expect(model.warning).toMatch(/k1 \+ k2/);
    expect(model.sliders!.k1).toBeCloseTo(0.45, 9);
    const sent = transport.ofKind("set_params");
    expect(sent[sent.length - 1].payload).toEqual({ k1: 0.45 });
  });

  it("snaps slider values to their grids", () => {
    const transport = new FakeTransport();
    const model = new UiSessionModel(transport);
    openSource(model, transport);
    model.adjust("lambda", 0.533);
    expect(model.sliders!.lambda).toBeCloseTo(0.5, 9);
    model.adjust("iterations", 120);
    expect(model.sliders!.iterations).toBe(100);
  });
});

describe("pane synchronization", () => {
  it("switches panes only when the whole triplet arrived", () => {
    const transport = new FakeTransport();
    const model = new UiSessionModel(transport);
    openSource(model, transport);
    expect(model.triplet!.index).toBe(1);
    frameMeta(model, 2, DEFAULTS);
    model.onBinary(encodeFrameMessage({ index: 2, role: ROLE_INPUT, png: new Uint8Array(1) }));
    model.onBinary(encodeFrameMessage({ index: 2, role: ROLE_PROCESSED, png: new Uint8Array(1) }));
    expect(model.triplet!.index).toBe(1); // stabilized pane not ready yet
    model.onBinary(encodeFrameMessage({ index: 2, role: ROLE_STABILIZED, png: new Uint8Array(1) }));
    expect(model.triplet!.index).toBe(2);
    expect(model.currentIndex).toBe(2);
  });
});

describe("scrubbing", () => {
  it("pauses before seeking while playing", () => {
    const transport = new FakeTransport();
    const model = new UiSessionModel(transport);
    openSource(model, transport);
    model.play();
    model.onText(JSON.stringify({ kind: "ack", for: "play", playing: true }));
    expect(model.playing).toBe(true);
    model.scrub(3);
    const kinds = transport.sent.map((m) => m.kind);
    const pauseAt = kinds.indexOf("pause");
    const seekAt = kinds.indexOf("seek");
    expect(pauseAt).toBeGreaterThan(-1);
    expect(seekAt).toBeGreaterThan(pauseAt);
    expect(transport.ofKind("seek")[0].payload).toEqual({ frame: 3 });
  });

  it("clamps 0 to 1 and blocks past-the-end targets", () => {
    const transport = new FakeTransport();
    const model = new UiSessionModel(transport);
    openSource(model, transport, 5);
    model.scrub(0);
    expect(transport.ofKind("seek")[0].payload).toEqual({ frame: 1 });
    model.scrub(11);
    expect(transport.ofKind("seek")).toHaveLength(1); // blocked client-side
    expect(model.warning).toMatch(/past the end/)
  });
});

describe("connection lifecycle", () => {
  it("exposes an error state and resets transient state on close", () => {
    const transport = new FakeTransport();
    const model = new UiSessionModel(transport);
    model.markConnecting();
    expect(model.connection).toBe("connecting");
    model.markClosed("connection failed");
    expect(model.connection).toBe("error");
    expect(model.lastError).toBe("connection failed");
    expect(model.playing).toBe(false);
  });

  it("ends playback on end_of_stream", () => {
    const transport = new FakeTransport();
    const model = new UiSessionModel(transport);
    openSource(model, transport, 3);
    model.play();
    model.onText(JSON.stringify({ kind: "ack", for: "play", playing: true }));
    model.onText(JSON.stringify({ kind: "end_of_stream", index: 3 }));
    expect(model.playing).toBe(false);
    expect(model.ended).toBe(true);
  });
});
