/**
 * Reference stage server: all five stage roles as deterministic stubs.
 *
 * Answers text_batch, speech_batch, and predict_request from the pinned
 * generators, so an engine routed through this server produces traces
 * byte-identical to its built-in path for equal seeds.  Malformed lines
 * get an error reply and the connection stays alive; replies per session
 * carry a strictly increasing seq.
 */

import * as net from "node:net";

import { featureFloats, speechTokenIds, textTokenIds } from "./hash.js";
import {
  decodeMessage,
  encodeMessage,
  LineBuffer,
  PROTOCOL_VERSION,
  WireError,
  WireMessage,
} from "./wire.js";

export const ALL_ROLES = [
  "voice_encoder",
  "text_llm",
  "voice_token_lm",
  "token2wav",
  "duplex_predictor",
] as const;

export type Role = (typeof ALL_ROLES)[number];

interface SessionConfig {
  seed: number;
  codebookSize: number;
  textVocab: number;
  predictor: Record<string, unknown>;
}

interface Decision {
  decision: string;
  confidence: number;
}

function asInt(value: unknown, name: string): number {
  if (typeof value !== "number" || !Number.isInteger(value)) {
    throw new WireError(`${name} must be an integer`);
  }
  return value;
}

export class StageResponder {
  private configs = new Map<string, SessionConfig>();
  private outSeq = new Map<string, number>();
  private inSeq = new Map<string, number>();

  constructor(
    readonly roles: readonly Role[] = ALL_ROLES,
    readonly defaultSeed = 0,
  ) {}

  private nextSeq(session: string): number {
    const seq = this.outSeq.get(session) ?? 0;
    this.outSeq.set(session, seq + 1);
    return seq;
  }

  private reply(session: string, type: WireMessage["type"], payload: Record<string, unknown>): string {
    return encodeMessage({ type, session, seq: this.nextSeq(session), payload }).trimEnd();
  }

  private config(session: string): SessionConfig {
    let cfg = this.configs.get(session);
    if (!cfg) {
      cfg = { seed: this.defaultSeed, codebookSize: 1024, textVocab: 32000, predictor: {} };
      this.configs.set(session, cfg);
    }
    return cfg;
  }

  handleLine(line: string): string[] {
    const trimmed = line.replace(/\r?\n$/, "");
    if (!trimmed) return [];

    let msg: WireMessage;
    try {
      msg = decodeMessage(trimmed);
    } catch (err) {
      return [this.reply("", "error", { reason: "parse", detail: (err as Error).message })];
    }

    const last = this.inSeq.get(msg.session);
    if (last !== undefined && msg.seq <= last) {
      // keep the high-water mark; duplicates stay rejected
      return [this.reply(msg.session, "error", { reason: "seq_order", got: msg.seq, last })];
    }
    this.inSeq.set(msg.session, msg.seq);

    try {
      return this.dispatch(msg);
    } catch (err) {
      if (err instanceof WireError) {
        return [this.reply(msg.session, "error", { reason: "bad_payload", detail: err.message })];
      }
      throw err;
    }
  }

  private dispatch(msg: WireMessage): string[] {
    switch (msg.type) {
      case "hello":
        return [
          this.reply(msg.session, "hello", {
            protocol_version: PROTOCOL_VERSION,
            roles: [...this.roles],
          }),
        ];
      case "configure": {
        const cfg = this.config(msg.session);
        const p = msg.payload;
        if (p["seed"] !== undefined) cfg.seed = asInt(p["seed"], "seed");
        if (p["codebook_size"] !== undefined) cfg.codebookSize = asInt(p["codebook_size"], "codebook_size");
        if (p["text_vocab"] !== undefined) cfg.textVocab = asInt(p["text_vocab"], "text_vocab");
        if (p["predictor"] !== undefined) cfg.predictor = p["predictor"] as Record<string, unknown>;
        return [this.reply(msg.session, "ack", {})];
      }
      case "text_batch": {
        const cfg = this.config(msg.session);
        const turn = asInt(msg.payload["turn"], "turn");
        const start = asInt(msg.payload["start"], "start");
        const count = asInt(msg.payload["count"], "count");
        const tokens = textTokenIds(cfg.seed, msg.session, turn, start, count, cfg.textVocab);
        return [this.reply(msg.session, "text_batch", { turn, start, tokens })];
      }
      case "speech_batch": {
        if (Array.isArray(msg.payload["tokens"])) {
          // token2wav direction: audio-chunk delivery, acknowledge only
          return [this.reply(msg.session, "ack", {})];
        }
        const cfg = this.config(msg.session);
        const turn = asInt(msg.payload["turn"], "turn");
        const start = asInt(msg.payload["start"], "start");
        const count = asInt(msg.payload["count"], "count");
        const tokens = speechTokenIds(cfg.seed, msg.session, turn, start, count, cfg.codebookSize);
        return [this.reply(msg.session, "speech_batch", { turn, start, tokens })];
      }
      case "marker":
        return [this.reply(msg.session, "ack", {})];
      case "predict_request": {
        const cfg = this.config(msg.session);
        const chunk = asInt(msg.payload["chunk"], "chunk");
        const d = decide(cfg.predictor, chunk, msg.payload);
        return [
          this.reply(msg.session, "predict_response", {
            chunk,
            decision: d.decision,
            confidence: d.confidence,
          }),
        ];
      }
      case "ack":
      case "error":
        return [];
      default:
        return [this.reply(msg.session, "error", { reason: "unsupported", type: msg.type })];
    }
  }
}

export function decide(
  predictor: Record<string, unknown>,
  chunk: number,
  payload: Record<string, unknown>,
): Decision {
  const kind = predictor["kind"];
  if (kind === "scripted") {
    const script = (predictor["script"] as unknown[][]) ?? [];
    for (const entry of script) {
      if (Number(entry[0]) === chunk) {
        return {
          decision: String(entry[1]),
          confidence: entry.length > 2 ? Number(entry[2]) : 1.0,
        };
      }
    }
    return { decision: "no_action", confidence: 0.0 };
  }
  if (kind === "threshold") {
    const feature = (payload["feature"] as number[]) ?? [];
    const idx = Number(predictor["energy_index"] ?? 0);
    const takeThreshold = Number(predictor["take_turn_threshold"] ?? 0.75);
    const haltThreshold = Number(predictor["halt_threshold"] ?? 0.55);
    const energy = Number(feature[idx] ?? 0);
    const confidence = Math.min(1, Math.max(0, energy));
    const userSpeaking = Boolean(payload["user_speaking"]);
    const justStopped = Boolean(payload["user_just_stopped"]);
    const assistantSpeaking = Boolean(payload["assistant_speaking"]);
    if (!assistantSpeaking) {
      if (!userSpeaking && justStopped && energy >= takeThreshold) {
        return { decision: "take_turn", confidence };
      }
      return { decision: "no_action", confidence: 0.0 };
    }
    if (userSpeaking && energy >= haltThreshold) {
      return { decision: "halt_and_listen", confidence };
    }
    return { decision: "no_action", confidence: 0.0 };
  }
  return { decision: "no_action", confidence: 0.0 };
}

// ---------------------------------------------------------------------------
// Transports

export function serveStdio(responder: StageResponder): void {
  const buffer = new LineBuffer();
  process.stdin.setEncoding("utf-8");
  process.stdin.on("data", (chunk: string) => {
    for (const line of buffer.push(chunk)) {
      for (const reply of responder.handleLine(line)) {
        process.stdout.write(reply + "\n");
      }
    }
  });
  process.stdin.on("end", () => process.exit(0));
}

export function serveTcp(
  makeResponder: () => StageResponder,
  host: string,
  port: number,
  onListen?: (port: number) => void,
): net.Server {
  const server = net.createServer((socket) => {
    const responder = makeResponder();
    const buffer = new LineBuffer();
    socket.setEncoding("utf-8");
    socket.on("data", (chunk: string) => {
      for (const line of buffer.push(chunk)) {
        for (const reply of responder.handleLine(line)) {
          socket.write(reply + "\n");
        }
      }
    });
    socket.on("error", () => socket.destroy());
  });
  server.listen(port, host, () => {
    const addr = server.address();
    if (onListen && addr && typeof addr === "object") onListen(addr.port);
  });
  return server;
}

export { featureFloats };
