/**
 * Wire codec: one JSON object per line, canonical field order
 * (type, session, seq, payload), compact encoding, trailing newline.
 */

export const PROTOCOL_VERSION = 1;

export const MESSAGE_TYPES = [
  "hello",
  "configure",
  "text_batch",
  "speech_batch",
  "marker",
  "predict_request",
  "predict_response",
  "ack",
  "error",
] as const;

export type MessageType = (typeof MESSAGE_TYPES)[number];

export interface WireMessage {
  type: MessageType;
  session: string;
  seq: number;
  payload: Record<string, unknown>;
}

export class WireError extends Error {}

export function encodeMessage(msg: WireMessage): string {
  if (!MESSAGE_TYPES.includes(msg.type)) {
    throw new WireError(`unknown message type ${JSON.stringify(msg.type)}`);
  }
  // Literal construction fixes the key order; JSON.stringify preserves it.
  return (
    JSON.stringify({
      type: msg.type,
      session: msg.session,
      seq: msg.seq,
      payload: msg.payload,
    }) + "\n"
  );
}

export function decodeMessage(line: string): WireMessage {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch (err) {
    throw new WireError(`malformed message line: ${(err as Error).message}`);
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new WireError("message line must hold a JSON object");
  }
  const record = obj as Record<string, unknown>;
  const type = record["type"];
  if (typeof type !== "string" || !MESSAGE_TYPES.includes(type as MessageType)) {
    throw new WireError(`unknown message type ${JSON.stringify(type)}`);
  }
  if (typeof record["session"] !== "string") {
    throw new WireError("session must be a string");
  }
  if (typeof record["seq"] !== "number" || !Number.isInteger(record["seq"])) {
    throw new WireError("seq must be an integer");
  }
  const payload = record["payload"];
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
    throw new WireError("payload must be an object");
  }
  return {
    type: type as MessageType,
    session: record["session"] as string,
    seq: record["seq"] as number,
    payload: payload as Record<string, unknown>,
  };
}

/** Incremental newline splitter for byte-stream transports. */
export class LineBuffer {
  private buffer = "";

  push(chunk: string): string[] {
    this.buffer += chunk;
    const lines = this.buffer.split("\n");
    this.buffer = lines.pop() ?? "";
    return lines.filter((l) => l.length > 0);
  }
}
