import { describe, expect, test } from "vitest";

import { speechTokenIds } from "../dist/hash.js";
import { StageResponder } from "../dist/server.js";
import { decodeMessage, encodeMessage } from "../dist/wire.js";

function line(type: string, session: string, seq: number, payload: object): string {
  return encodeMessage({ type: type as any, session, seq, payload: payload as any });
}

function replies(responder: StageResponder, raw: string) {
  return responder.handleLine(raw).map((r) => decodeMessage(r));
}

describe("stage responder", () => {
  test("hello lists served roles", () => {
    const responder = new StageResponder(["text_llm", "duplex_predictor"]);
    const [reply] = replies(responder, line("hello", "", 0, { protocol_version: 1 }));
    expect(reply.type).toBe("hello");
    expect(reply.payload["roles"]).toEqual(["text_llm", "duplex_predictor"]);
  });

  test("speech batch uses the configured seed", () => {
    const responder = new StageResponder();
    replies(responder, line("configure", "sx", 0, { seed: 9, codebook_size: 512 }));
    const [reply] = replies(
      responder,
      line("speech_batch", "sx", 1, { turn: 0, start: 0, count: 8 }),
    );
    expect(reply.payload["tokens"]).toEqual(speechTokenIds(9, "sx", 0, 0, 8, 512));
  });

  test("malformed line gets a parse error and service continues", () => {
    const responder = new StageResponder();
    const [err] = replies(responder, "not json at all");
    expect(err.type).toBe("error");
    expect(err.payload["reason"]).toBe("parse");
    const [ok] = replies(responder, line("hello", "", 0, {}));
    expect(ok.type).toBe("hello");
  });

  test("inbound seq regression is rejected but later traffic passes", () => {
    const responder = new StageResponder();
    replies(responder, line("marker", "s", 5, { turn: 0, marker: "TurnOfSpeech" }));
    const [err] = replies(responder, line("marker", "s", 5, { turn: 0, marker: "TurnOfSpeech" }));
    expect(err.type).toBe("error");
    expect(err.payload["reason"]).toBe("seq_order");
    const [ok] = replies(responder, line("marker", "s", 6, { turn: 0, marker: "EndOfSpeech" }));
    expect(ok.type).toBe("ack");
  });

  test("reply seq strictly increases per session", () => {
    const responder = new StageResponder();
    const seqs: number[] = [];
    let seq = 0;
    for (let i = 0; i < 5; i++) {
      const [reply] = replies(responder, line("marker", "s", seq++, { turn: 0, marker: "x" }));
      seqs.push(reply.seq);
    }
    expect(seqs).toEqual([0, 1, 2, 3, 4]);
  });

  test("token2wav delivery is acknowledged, generation is answered", () => {
    const responder = new StageResponder();
    const [ack] = replies(
      responder,
      line("speech_batch", "s", 0, { turn: 0, start: 0, tokens: [1, 2, 3] }),
    );
    expect(ack.type).toBe("ack");
    const [gen] = replies(
      responder,
      line("speech_batch", "s", 1, { turn: 0, start: 0, count: 3 }),
    );
    expect(gen.type).toBe("speech_batch");
    expect((gen.payload["tokens"] as number[]).length).toBe(3);
  });

  test("scripted predictions follow the configured script", () => {
    const responder = new StageResponder();
    replies(
      responder,
      line("configure", "s", 0, {
        predictor: { kind: "scripted", script: [[4, "halt_and_listen", 0.25]] },
      }),
    );
    const [hit] = replies(
      responder,
      line("predict_request", "s", 1, { chunk: 4, feature: [] }),
    );
    expect(hit.payload).toEqual({ chunk: 4, decision: "halt_and_listen", confidence: 0.25 });
    const [miss] = replies(
      responder,
      line("predict_request", "s", 2, { chunk: 5, feature: [] }),
    );
    expect(miss.payload["decision"]).toBe("no_action");
  });

  test("threshold predictions mirror the engine's rules", () => {
    const responder = new StageResponder();
    replies(
      responder,
      line("configure", "s", 0, {
        predictor: {
          kind: "threshold",
          take_turn_threshold: 0.75,
          halt_threshold: 0.55,
          energy_index: 0,
        },
      }),
    );
    const cases = [
      // [user, stopped, assistant, energy] -> decision
      [[false, true, false, 0.9], "take_turn"],
      [[false, false, false, 0.9], "no_action"],
      [[true, false, true, 0.9], "halt_and_listen"],
      [[true, false, true, 0.3], "no_action"],
      [[false, false, true, 0.9], "no_action"],
    ] as const;
    let seq = 1;
    for (const [[user, stopped, assistant, energy], expected] of cases) {
      const [reply] = replies(
        responder,
        line("predict_request", "s", seq++, {
          chunk: seq,
          user_speaking: user,
          user_just_stopped: stopped,
          assistant_speaking: assistant,
          feature: [energy, 0.1],
        }),
      );
      expect(reply.payload["decision"]).toBe(expected);
    }
  });

  test("bad payload gets an error without killing the connection", () => {
    const responder = new StageResponder();
    const [err] = replies(responder, line("text_batch", "s", 0, { turn: 0 }));
    expect(err.type).toBe("error");
    expect(err.payload["reason"]).toBe("bad_payload");
    const [ok] = replies(responder, line("hello", "", 0, {}));
    expect(ok.type).toBe("hello");
  });
});
