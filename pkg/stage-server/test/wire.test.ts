import { describe, expect, test } from "vitest";

import { LineBuffer, decodeMessage, encodeMessage, WireError } from "../dist/wire.js";

describe("codec", () => {
  test("ack golden bytes", () => {
    const line = encodeMessage({ type: "ack", session: "s1", seq: 3, payload: {} });
    expect(line).toBe('{"type":"ack","session":"s1","seq":3,"payload":{}}\n');
  });

  test("round trip", () => {
    const msg = {
      type: "speech_batch" as const,
      session: "s0",
      seq: 12,
      payload: { turn: 1, start: 15, tokens: [5, 6, 7] },
    };
    expect(decodeMessage(encodeMessage(msg).trimEnd())).toEqual(msg);
  });

  test("unknown type names it", () => {
    expect(() =>
      decodeMessage('{"type":"bogus","session":"s","seq":0,"payload":{}}'),
    ).toThrowError(/bogus/);
  });

  test("malformed json", () => {
    expect(() => decodeMessage("{oops")).toThrowError(WireError);
  });

  test("missing fields", () => {
    expect(() => decodeMessage('{"type":"ack","session":"s"}')).toThrowError(WireError);
  });
});

describe("line buffer", () => {
  test("reassembles split lines", () => {
    const buf = new LineBuffer();
    expect(buf.push('{"a"')).toEqual([]);
    expect(buf.push(':1}\n{"b":2}\n{"c"')).toEqual(['{"a":1}', '{"b":2}']);
    expect(buf.push(":3}\n")).toEqual(['{"c":3}']);
  });
});
