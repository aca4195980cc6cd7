/**
 * Wire protocol types and codecs for the live session server.
 *
 * Text messages are JSON lines; binary messages carry a 16-byte header
 * (u32 LE index, u8 role, 3 reserved bytes, u64 LE payload length) followed
 * by PNG bytes. See protocol.md in the repository root.
 */

export const ROLE_INPUT = 0;
export const ROLE_PROCESSED = 1;
export const ROLE_STABILIZED = 2;
export type Role = typeof ROLE_INPUT | typeof ROLE_PROCESSED | typeof ROLE_STABILIZED;

export interface Params {
  k1: number;
  k2: number;
  alpha: number;
  lambda: number;
  eta: number;
  kappa: number;
  iterations: number;
  flow_downscale: number;
}

export interface HelloMessage {
  kind: "hello";
  sources: string[];
  presets: string[];
  params: Params;
}

export interface AckMessage {
  kind: "ack";
  for: string;
  params?: Params;
  preset?: string;
  source?: string;
  frames?: number;
  width?: number;
  height?: number;
  frame?: number;
  playing?: boolean;
}

export interface ErrorMessage {
  kind: "error";
  message: string;
  for?: string;
}

export interface FrameMeta {
  kind: "frame_meta";
  index: number;
  params: Params;
  preset: string | null;
  timing_ms: { flow: number; solve: number };
}

export interface EndOfStream {
  kind: "end_of_stream";
  index: number;
}

export type ServerMessage = HelloMessage | AckMessage | ErrorMessage | FrameMeta | EndOfStream;

export interface FramePayload {
  index: number;
  role: Role;
  png: Uint8Array;
}

export const HEADER_BYTES = 16;

export function parseServerMessage(text: string): ServerMessage {
  const parsed = JSON.parse(text) as ServerMessage;
  if (!parsed || typeof parsed !== "object" || !("kind" in parsed)) {
    throw new Error("malformed server message");
  }
  return parsed;
}

export function decodeFrameMessage(data: ArrayBuffer): FramePayload {
  if (data.byteLength < HEADER_BYTES) {
    throw new Error(`frame message too short: ${data.byteLength} bytes`);
  }
  const view = new DataView(data);
  const index = view.getUint32(0, true);
  const role = view.getUint8(4);
  const length = Number(view.getBigUint64(8, true));
  if (role !== ROLE_INPUT && role !== ROLE_PROCESSED && role !== ROLE_STABILIZED) {
    throw new Error(`unknown frame role ${role}`);
  }
  if (data.byteLength !== HEADER_BYTES + length) {
    throw new Error(`frame payload length mismatch: header says ${length}`);
  }
  return { index, role, png: new Uint8Array(data, HEADER_BYTES) };
}

export function encodeFrameMessage(payload: FramePayload): ArrayBuffer {
  const out = new ArrayBuffer(HEADER_BYTES + payload.png.byteLength);
  const view = new DataView(out);
  view.setUint32(0, payload.index, true);
  view.setUint8(4, payload.role);
  view.setBigUint64(8, BigInt(payload.png.byteLength), true);
  new Uint8Array(out, HEADER_BYTES).set(payload.png);
  return out;
}

export function controlMessage(kind: string, payload?: Record<string, unknown>): string {
  return JSON.stringify(payload === undefined ? { kind } : { kind, payload });
}

/** Slider metadata; ranges cover the regimes worth exploring, including the
 * ghosting (high k1) and over-smoothing (high lambda) extremes. */
export interface SliderSpec {
  id: "k1" | "k2" | "alpha" | "lambda";
  label: string;
  min: number;
  max: number;
  step: number;
}

export const SLIDER_SPECS: SliderSpec[] = [
  { id: "k1", label: "k1 - global consistency", min: 0, max: 0.9, step: 0.05 },
  { id: "k2", label: "k2 - next-frame weight", min: 0, max: 0.9, step: 0.05 },
  { id: "alpha", label: "alpha - residual sharpness", min: 500, max: 20000, step: 500 },
  { id: "lambda", label: "lambda - smoothness", min: 0, max: 7, step: 0.1 },
];

export const ITERATION_CHOICES = [25, 50, 100, 150, 300];

/** Largest k1 + k2 the UI will ever send; keeps the server-side 0 < k1+k2 < 1
 * invariant satisfied with a safety margin of one slider step. */
export const MAX_WEIGHT_SUM = 0.95;

export function snapToStep(value: number, spec: SliderSpec): number {
  const snapped = Math.round((value - spec.min) / spec.step) * spec.step + spec.min;
  const bounded = Math.min(spec.max, Math.max(spec.min, snapped));
  return Number(bounded.toFixed(6));
}

export function snapIterations(value: number): number {
  let best = ITERATION_CHOICES[0];
  for (const choice of ITERATION_CHOICES) {
    if (Math.abs(choice - value) < Math.abs(best - value)) {
      best = choice;
    }
  }
  return best;
}
