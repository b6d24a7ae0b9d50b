// Frame codec bit-exactness against fixtures generated by the backend.

import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";

import {
  b64urlDecode,
  b64urlEncode,
  canonicalJson,
  decodeStream,
  encodeStream,
  frameFromBytes,
  frameToBytes,
  framePayloadBytes,
  makeFrame,
  type FrameType,
} from "../src/frames.js";

interface FixtureCase {
  frameType: FrameType;
  payloadB64: string;
  payloadHex: string;
  frameBytesB64: string;
  streamBytesB64: string;
}

const fixtures = JSON.parse(
  readFileSync(path.join(path.dirname(fileURLToPath(import.meta.url)), "fixtures", "frames.json"), "utf-8"),
) as { cases: FixtureCase[] };

function hexToBytes(hex: string): Uint8Array {
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) out[i] = parseInt(hex.slice(i * 2, i * 2 + 2), 16);
  return out;
}

describe("frame codec is bit-exact with the backend", () => {
  for (const [index, testCase] of fixtures.cases.entries()) {
    it(`case ${index}: ${testCase.frameType} frame`, () => {
      const payload = hexToBytes(testCase.payloadHex);
      expect(b64urlEncode(payload)).toBe(testCase.payloadB64);
      expect(Array.from(b64urlDecode(testCase.payloadB64))).toEqual(Array.from(payload));

      const frame = makeFrame(testCase.frameType, payload);
      expect(b64urlEncode(frameToBytes(frame))).toBe(testCase.frameBytesB64);
      expect(b64urlEncode(encodeStream(frame))).toBe(testCase.streamBytesB64);

      const decoded = frameFromBytes(b64urlDecode(testCase.frameBytesB64));
      expect(decoded.frameType).toBe(testCase.frameType);
      expect(Array.from(framePayloadBytes(decoded))).toEqual(Array.from(payload));

      const { frame: streamed, rest } = decodeStream(b64urlDecode(testCase.streamBytesB64));
      expect(streamed).toEqual(decoded);
      expect(rest.length).toBe(0);
    });
  }
});

describe("codec properties", () => {
  it("round-trips random payloads", () => {
    for (let i = 0; i < 200; i++) {
      const payload = new Uint8Array(i);
      for (let j = 0; j < i; j++) payload[j] = (i * 31 + j * 7) % 256;
      const frame = makeFrame("response", payload);
      const back = frameFromBytes(frameToBytes(frame));
      expect(Array.from(framePayloadBytes(back))).toEqual(Array.from(payload));
    }
  });

  it("rejects unknown frame types and junk payloads", () => {
    expect(() => frameFromBytes(new TextEncoder().encode('{"frameType":"hello","payload":""}'))).toThrow();
    expect(() => frameFromBytes(new TextEncoder().encode('{"frameType":"ack","payload":"!!"}'))).toThrow();
    expect(() => b64urlDecode("a")).toThrow();
    expect(() => b64urlDecode("ab=c")).toThrow();
  });

  it("canonical json sorts keys recursively", () => {
    expect(canonicalJson({ b: 1, a: { d: 2, c: [3, { z: 1, y: 2 }] } })).toBe(
      '{"a":{"c":[3,{"y":2,"z":1}],"d":2},"b":1}',
    );
  });
});
