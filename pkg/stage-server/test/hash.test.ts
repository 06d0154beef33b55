import { describe, expect, test } from "vitest";

import {
  featureFloats,
  fnv1a64,
  hashUnitFloat,
  mix64,
  speechTokenIds,
  stageHash,
  textTokenIds,
} from "../dist/hash.js";

// The expected values below are the protocol's pinned vectors; the engine's
// built-in generators produce the same numbers, which is what makes traces
// byte-identical across implementations.

describe("pinned hash", () => {
  test("fnv1a64 vectors", () => {
    expect(fnv1a64(new Uint8Array())).toBe(14695981039346656037n);
    expect(fnv1a64(new TextEncoder().encode("abc"))).toBe(16654208175385433931n);
  });

  test("mix64 vectors", () => {
    expect(mix64(0n)).toBe(0n);
    expect(mix64(1n)).toBe(6238072747940578789n);
  });

  test("stage hash vector", () => {
    expect(stageHash("speech", 1, "s", 0, 0)).toBe(7292703613215498237n);
  });

  test("speech token golden list", () => {
    expect(speechTokenIds(1, "s", 0, 0, 5, 1024)).toEqual([1021, 667, 464, 671, 757]);
  });

  test("text token golden list", () => {
    expect(textTokenIds(1, "s", 0, 0, 5, 32000)).toEqual([10770, 18289, 3136, 1377, 31315]);
  });

  test("flat indexing is batch invariant", () => {
    const whole = speechTokenIds(4, "s", 1, 0, 45, 1024);
    const parts = [
      ...speechTokenIds(4, "s", 1, 0, 15, 1024),
      ...speechTokenIds(4, "s", 1, 15, 15, 1024),
      ...speechTokenIds(4, "s", 1, 30, 15, 1024),
    ];
    expect(whole).toEqual(parts);
  });

  test("unit floats are exact and in range", () => {
    expect(hashUnitFloat(0n)).toBe(0);
    expect(hashUnitFloat((1n << 64n) - 1n)).toBe((2 ** 53 - 1) * 2 ** -53);
    for (const x of featureFloats(1, "s", 3, 16)) {
      expect(x).toBeGreaterThanOrEqual(0);
      expect(x).toBeLessThan(1);
    }
  });

  test("feature floats match the engine's pinned values", () => {
    const xs = featureFloats(1, "s", 3, 4);
    expect(xs).toEqual([
      0.6557368841211427, 0.20534377664369552, 0.974254301104565, 0.03278932749535657,
    ]);
  });
});
