/**
 * Conformance checker for stage servers.
 *
 * Exercises every message type, the session/seq echo rules, deterministic
 * generator agreement, malformed-line recovery, and reply deadlines
 * against any target speaking the wire protocol (a spawned command over
 * stdio, or a TCP address).  The result is a pass/fail report per check.
 */

import { spawn, ChildProcess } from "node:child_process";
import * as net from "node:net";

import { speechTokenIds, textTokenIds } from "./hash.js";
import { decodeMessage, encodeMessage, LineBuffer, WireMessage } from "./wire.js";

export interface CheckResult {
  name: string;
  pass: boolean;
  detail: string;
}

export interface ConformanceReport {
  target: string;
  checks: CheckResult[];
  allPass: boolean;
}

export interface Target {
  sendLine(line: string): void;
  nextLine(timeoutMs: number): Promise<string>;
  close(): void;
  describe(): string;
}

export class CommandTarget implements Target {
  private proc: ChildProcess;
  private lines: string[] = [];
  private waiters: Array<(line: string) => void> = [];
  private buffer = new LineBuffer();
  private closed = false;

  constructor(readonly argv: string[]) {
    this.proc = spawn(argv[0], argv.slice(1), { stdio: ["pipe", "pipe", "inherit"] });
    this.proc.stdout!.setEncoding("utf-8");
    this.proc.stdout!.on("data", (chunk: string) => {
      for (const line of this.buffer.push(chunk)) {
        const waiter = this.waiters.shift();
        if (waiter) waiter(line);
        else this.lines.push(line);
      }
    });
    this.proc.on("exit", () => {
      this.closed = true;
    });
  }

  sendLine(line: string): void {
    this.proc.stdin!.write(line.endsWith("\n") ? line : line + "\n");
  }

  nextLine(timeoutMs: number): Promise<string> {
    const queued = this.lines.shift();
    if (queued !== undefined) return Promise.resolve(queued);
    if (this.closed) return Promise.reject(new Error("target exited"));
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        const at = this.waiters.indexOf(resolve);
        if (at >= 0) this.waiters.splice(at, 1);
        reject(new Error(`no reply within ${timeoutMs} ms`));
      }, timeoutMs);
      this.waiters.push((line) => {
        clearTimeout(timer);
        resolve(line);
      });
    });
  }

  close(): void {
    this.proc.stdin?.end();
    setTimeout(() => this.proc.kill(), 2000).unref();
  }

  describe(): string {
    return `command: ${this.argv.join(" ")}`;
  }
}

export class TcpTarget implements Target {
  private socket: net.Socket;
  private lines: string[] = [];
  private waiters: Array<(line: string) => void> = [];
  private buffer = new LineBuffer();

  private constructor(socket: net.Socket, readonly address: string) {
    this.socket = socket;
    socket.setEncoding("utf-8");
    socket.on("data", (chunk: string) => {
      for (const line of this.buffer.push(chunk)) {
        const waiter = this.waiters.shift();
        if (waiter) waiter(line);
        else this.lines.push(line);
      }
    });
  }

  static connect(host: string, port: number, timeoutMs = 5000): Promise<TcpTarget> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host, port, timeout: timeoutMs });
      socket.once("connect", () => resolve(new TcpTarget(socket, `${host}:${port}`)));
      socket.once("error", reject);
      socket.once("timeout", () => reject(new Error(`connect timeout to ${host}:${port}`)));
    });
  }

  sendLine(line: string): void {
    this.socket.write(line.endsWith("\n") ? line : line + "\n");
  }

  nextLine(timeoutMs: number): Promise<string> {
    const queued = this.lines.shift();
    if (queued !== undefined) return Promise.resolve(queued);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        const at = this.waiters.indexOf(resolve);
        if (at >= 0) this.waiters.splice(at, 1);
        reject(new Error(`no reply within ${timeoutMs} ms`));
      }, timeoutMs);
      this.waiters.push((line) => {
        clearTimeout(timer);
        resolve(line);
      });
    });
  }

  close(): void {
    this.socket.end();
  }

  describe(): string {
    return `tcp: ${this.address}`;
  }
}

const SEED = 17;
const SESSION = "conform";
const CODEBOOK = 1024;
const VOCAB = 32000;

export async function runConformance(
  target: Target,
  deadlineMs = 5000,
): Promise<ConformanceReport> {
  const checks: CheckResult[] = [];
  const seqBySession = new Map<string, number>();
  let outSeq = new Map<string, number>();

  function send(type: WireMessage["type"], session: string, payload: Record<string, unknown>): void {
    const seq = outSeq.get(session) ?? 0;
    outSeq.set(session, seq + 1);
    target.sendLine(encodeMessage({ type, session, seq, payload }));
  }

  async function recv(): Promise<WireMessage> {
    const line = await target.nextLine(deadlineMs);
    return decodeMessage(line);
  }

  function observeSeq(msg: WireMessage): string | null {
    const last = seqBySession.get(msg.session);
    seqBySession.set(msg.session, msg.seq);
    if (last !== undefined && msg.seq <= last) {
      return `session ${JSON.stringify(msg.session)} reply seq ${msg.seq} after ${last}`;
    }
    return null;
  }

  async function check(name: string, body: () => Promise<string>): Promise<void> {
    try {
      const detail = await body();
      checks.push({ name, pass: true, detail });
    } catch (err) {
      checks.push({ name, pass: false, detail: (err as Error).message });
    }
  }

  const seqViolations: string[] = [];
  async function exchange(
    type: WireMessage["type"],
    session: string,
    payload: Record<string, unknown>,
  ): Promise<WireMessage> {
    send(type, session, payload);
    const reply = await recv();
    const violation = observeSeq(reply);
    if (violation) seqViolations.push(violation);
    if (reply.session !== session) {
      throw new Error(`reply session ${JSON.stringify(reply.session)} != ${JSON.stringify(session)}`);
    }
    return reply;
  }

  await check("hello-handshake", async () => {
    const reply = await exchange("hello", "", { protocol_version: 1 });
    if (reply.type !== "hello") throw new Error(`expected hello, got ${reply.type}`);
    const roles = reply.payload["roles"];
    if (!Array.isArray(roles) || roles.length === 0) throw new Error("no roles listed");
    return `roles: ${(roles as string[]).join(", ")}`;
  });

  await check("configure-ack", async () => {
    const reply = await exchange("configure", SESSION, {
      seed: SEED,
      codebook_size: CODEBOOK,
      text_vocab: VOCAB,
      predictor: { kind: "scripted", script: [[7, "take_turn", 1.0]] },
    });
    if (reply.type !== "ack") throw new Error(`expected ack, got ${reply.type}`);
    return "configured";
  });

  await check("text-batch-agreement", async () => {
    const reply = await exchange("text_batch", SESSION, { turn: 0, start: 0, count: 5 });
    if (reply.type !== "text_batch") throw new Error(`expected text_batch, got ${reply.type}`);
    const expected = textTokenIds(SEED, SESSION, 0, 0, 5, VOCAB);
    const got = reply.payload["tokens"];
    if (JSON.stringify(got) !== JSON.stringify(expected)) {
      throw new Error(`tokens ${JSON.stringify(got)} != ${JSON.stringify(expected)}`);
    }
    return `tokens match: ${JSON.stringify(expected)}`;
  });

  await check("speech-batch-agreement", async () => {
    const reply = await exchange("speech_batch", SESSION, { turn: 2, start: 15, count: 15 });
    if (reply.type !== "speech_batch") throw new Error(`expected speech_batch, got ${reply.type}`);
    const expected = speechTokenIds(SEED, SESSION, 2, 15, 15, CODEBOOK);
    const got = reply.payload["tokens"];
    if (JSON.stringify(got) !== JSON.stringify(expected)) {
      throw new Error(`tokens ${JSON.stringify(got)} != ${JSON.stringify(expected)}`);
    }
    return "pinned-hash generator agrees";
  });

  await check("token2wav-delivery-ack", async () => {
    const reply = await exchange("speech_batch", SESSION, {
      turn: 2,
      start: 15,
      tokens: speechTokenIds(SEED, SESSION, 2, 15, 15, CODEBOOK),
    });
    if (reply.type !== "ack") throw new Error(`expected ack, got ${reply.type}`);
    return "delivery acknowledged";
  });

  await check("marker-ack", async () => {
    const reply = await exchange("marker", SESSION, { turn: 2, marker: "TurnOfSpeech" });
    if (reply.type !== "ack") throw new Error(`expected ack, got ${reply.type}`);
    return "marker acknowledged";
  });

  await check("predict-scripted", async () => {
    const reply = await exchange("predict_request", SESSION, {
      chunk: 7,
      user_speaking: false,
      user_just_stopped: true,
      assistant_speaking: false,
      feature: [0.5, 0.5],
    });
    if (reply.type !== "predict_response") throw new Error(`expected predict_response, got ${reply.type}`);
    if (reply.payload["decision"] !== "take_turn") {
      throw new Error(`scripted chunk 7 gave ${JSON.stringify(reply.payload["decision"])}`);
    }
    const miss = await exchange("predict_request", SESSION, {
      chunk: 8,
      user_speaking: false,
      user_just_stopped: false,
      assistant_speaking: false,
      feature: [0.5, 0.5],
    });
    if (miss.payload["decision"] !== "no_action") {
      throw new Error(`unscripted chunk gave ${JSON.stringify(miss.payload["decision"])}`);
    }
    return "scripted decisions match";
  });

  await check("predict-threshold", async () => {
    const session = "conform-threshold";
    const ack = await exchange("configure", session, {
      seed: SEED,
      predictor: { kind: "threshold", take_turn_threshold: 0.75, halt_threshold: 0.55, energy_index: 0 },
    });
    if (ack.type !== "ack") throw new Error(`expected ack, got ${ack.type}`);
    const halt = await exchange("predict_request", session, {
      chunk: 3,
      user_speaking: true,
      user_just_stopped: false,
      assistant_speaking: true,
      feature: [0.9, 0.1],
    });
    if (halt.payload["decision"] !== "halt_and_listen") {
      throw new Error(`loud overlap gave ${JSON.stringify(halt.payload["decision"])}`);
    }
    if (Number(halt.payload["confidence"]) !== 0.9) {
      throw new Error(`confidence ${JSON.stringify(halt.payload["confidence"])} != 0.9`);
    }
    return "threshold decisions match";
  });

  await check("malformed-line-recovery", async () => {
    target.sendLine("this is not json");
    const err = await recv();
    if (err.type !== "error" || err.payload["reason"] !== "parse") {
      throw new Error(`expected parse error, got ${err.type} ${JSON.stringify(err.payload)}`);
    }
    const reply = await exchange("marker", SESSION, { turn: 0, marker: "EndOfSpeech" });
    if (reply.type !== "ack") throw new Error("service did not continue after bad line");
    return "error reported, service continued";
  });

  await check("inbound-seq-regression-rejected", async () => {
    // Re-send seq 0 on a session that is far past it.
    target.sendLine(
      encodeMessage({ type: "marker", session: SESSION, seq: 0, payload: { turn: 0, marker: "EndOfSpeech" } }),
    );
    const reply = await recv();
    if (reply.type !== "error") throw new Error(`expected error, got ${reply.type}`);
    // recover the local counter book-keeping for that session
    return `rejected with reason ${JSON.stringify(reply.payload["reason"])}`;
  });

  await check("reply-seq-strictly-increasing", async () => {
    if (seqViolations.length > 0) throw new Error(seqViolations.join("; "));
    return "all observed replies increased per session";
  });

  await check("responds-within-deadline", async () => {
    const t0 = Date.now();
    const reply = await exchange("hello", "", { protocol_version: 1 });
    if (reply.type !== "hello") throw new Error(`expected hello, got ${reply.type}`);
    return `round trip ${Date.now() - t0} ms (deadline ${deadlineMs} ms)`;
  });

  return {
    target: target.describe(),
    checks,
    allPass: checks.every((c) => c.pass),
  };
}

export function formatReport(report: ConformanceReport): string {
  const lines = [`conformance report for ${report.target}`];
  for (const c of report.checks) {
    lines.push(`  [${c.pass ? "PASS" : "FAIL"}] ${c.name}: ${c.detail}`);
  }
  lines.push(report.allPass ? "all checks passed" : "CONFORMANCE FAILED");
  return lines.join("\n");
}
