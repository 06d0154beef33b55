/**
 * Pinned deterministic content generators.
 *
 * Both sides of the wire implement these independently and must agree bit
 * for bit: 64-bit FNV-1a over `domain|seed|session|major|minor`, finished
 * with the splitmix64 mixer.  All constants are fixed by PROTOCOL.md.
 */

const MASK64 = (1n << 64n) - 1n;
const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;

export function fnv1a64(data: Uint8Array): bigint {
  let h = FNV_OFFSET;
  for (const byte of data) {
    h ^= BigInt(byte);
    h = (h * FNV_PRIME) & MASK64;
  }
  return h;
}

export function mix64(value: bigint): bigint {
  let h = value & MASK64;
  h ^= h >> 30n;
  h = (h * 0xbf58476d1ce4e5b9n) & MASK64;
  h ^= h >> 27n;
  h = (h * 0x94d049bb133111ebn) & MASK64;
  h ^= h >> 31n;
  return h;
}

export function stageHash(
  domain: string,
  seed: number,
  session: string,
  major: number,
  minor: number,
): bigint {
  const text = `${domain}|${seed}|${session}|${major}|${minor}`;
  return mix64(fnv1a64(new TextEncoder().encode(text)));
}

/** Map a 64-bit hash to [0, 1) using its top 53 bits; exact in a double. */
export function hashUnitFloat(h: bigint): number {
  return Number(h >> 11n) * 2 ** -53;
}

export function speechTokenIds(
  seed: number,
  session: string,
  turn: number,
  start: number,
  count: number,
  codebookSize: number,
): number[] {
  const out: number[] = [];
  for (let i = 0; i < count; i++) {
    out.push(Number(stageHash("speech", seed, session, turn, start + i) % BigInt(codebookSize)));
  }
  return out;
}

export function textTokenIds(
  seed: number,
  session: string,
  turn: number,
  start: number,
  count: number,
  vocabSize: number,
): number[] {
  const out: number[] = [];
  for (let i = 0; i < count; i++) {
    out.push(Number(stageHash("text", seed, session, turn, start + i) % BigInt(vocabSize)));
  }
  return out;
}

export function featureFloats(
  seed: number,
  session: string,
  chunk: number,
  width: number,
): number[] {
  const out: number[] = [];
  for (let j = 0; j < width; j++) {
    out.push(hashUnitFloat(stageHash("feat", seed, session, chunk, j)));
  }
  return out;
}
