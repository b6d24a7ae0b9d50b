// Realtime channel frame codec, byte-identical to the backend's encoding:
// a frame is the canonical JSON (sorted keys, no whitespace, UTF-8) of
// {frameType, payload} where payload is unpadded base64url; on a socket it
// is preceded by a 4-byte big-endian length. The console event stream
// carries the same frame bytes, base64url-encoded, one frame per event.

export type FrameType = "request" | "response" | "ack";

export interface ChannelFrame {
  frameType: FrameType;
  payload: string; // base64url bytes
}

const FRAME_TYPES: readonly string[] = ["request", "response", "ack"];

const B64_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
const B64_INDEX = new Map<string, number>([...B64_ALPHABET].map((c, i) => [c, i]));

export function b64urlEncode(bytes: Uint8Array): string {
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const b0 = bytes[i]!;
    const b1 = i + 1 < bytes.length ? bytes[i + 1]! : undefined;
    const b2 = i + 2 < bytes.length ? bytes[i + 2]! : undefined;
    out += B64_ALPHABET[b0 >> 2];
    out += B64_ALPHABET[((b0 & 0x03) << 4) | ((b1 ?? 0) >> 4)];
    if (b1 === undefined) break;
    out += B64_ALPHABET[((b1 & 0x0f) << 2) | ((b2 ?? 0) >> 6)];
    if (b2 === undefined) break;
    out += B64_ALPHABET[b2 & 0x3f];
  }
  return out;
}

export function b64urlDecode(text: string): Uint8Array {
  if (text.length % 4 === 1) {
    throw new Error("invalid base64url length");
  }
  const out = new Uint8Array(Math.floor((text.length * 3) / 4));
  let acc = 0;
  let bits = 0;
  let pos = 0;
  for (const ch of text) {
    const val = B64_INDEX.get(ch);
    if (val === undefined) {
      throw new Error(`invalid base64url character ${JSON.stringify(ch)}`);
    }
    acc = (acc << 6) | val;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out[pos++] = (acc >> bits) & 0xff;
    }
  }
  if ((acc & ((1 << bits) - 1)) !== 0) {
    throw new Error("non-canonical base64url encoding");
  }
  return out;
}

// Canonical JSON: object keys sorted recursively, no whitespace. Matches
// the backend byte for byte on the value shapes used in frames.
export function canonicalJson(value: unknown): string {
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => JSON.stringify(k) + ":" + canonicalJson(v));
    return "{" + entries.join(",") + "}";
  }
  return JSON.stringify(value);
}

export function makeFrame(frameType: FrameType, payload: Uint8Array): ChannelFrame {
  return { frameType, payload: b64urlEncode(payload) };
}

export function frameToBytes(frame: ChannelFrame): Uint8Array {
  return new TextEncoder().encode(canonicalJson({ frameType: frame.frameType, payload: frame.payload }));
}

export function frameFromBytes(bytes: Uint8Array): ChannelFrame {
  const parsed: unknown = JSON.parse(new TextDecoder("utf-8", { fatal: true }).decode(bytes));
  if (parsed === null || typeof parsed !== "object" || Array.isArray(parsed)) {
    throw new Error("frame is not a map");
  }
  const record = parsed as Record<string, unknown>;
  const frameType = record["frameType"];
  const payload = record["payload"] ?? "";
  if (typeof frameType !== "string" || !FRAME_TYPES.includes(frameType)) {
    throw new Error(`unknown frame type ${JSON.stringify(frameType)}`);
  }
  if (typeof payload !== "string") {
    throw new Error("frame payload must be a base64url string");
  }
  b64urlDecode(payload); // validate early
  return { frameType: frameType as FrameType, payload };
}

export function framePayloadBytes(frame: ChannelFrame): Uint8Array {
  return b64urlDecode(frame.payload);
}

export function framePayloadJson(frame: ChannelFrame): unknown {
  return JSON.parse(new TextDecoder().decode(framePayloadBytes(frame)));
}

// Socket form: 4-byte big-endian length prefix, then the frame bytes.

export function encodeStream(frame: ChannelFrame): Uint8Array {
  const body = frameToBytes(frame);
  const out = new Uint8Array(4 + body.length);
  new DataView(out.buffer).setUint32(0, body.length, false);
  out.set(body, 4);
  return out;
}

export function decodeStream(bytes: Uint8Array): { frame: ChannelFrame; rest: Uint8Array } {
  if (bytes.length < 4) {
    throw new Error("truncated length prefix");
  }
  const length = new DataView(bytes.buffer, bytes.byteOffset).getUint32(0, false);
  if (bytes.length < 4 + length) {
    throw new Error("truncated frame body");
  }
  return {
    frame: frameFromBytes(bytes.subarray(4, 4 + length)),
    rest: bytes.subarray(4 + length),
  };
}
