/** Wire shapes, verbatim from the gateway. */

export interface EventFrame {
  session_id: string;
  seq: number;
  kind: string;
  agent: string;
  payload: Record<string, unknown>;
}

export interface SessionStatus {
  session_id: string;
  status: string;
  user_turns: number;
  llm_calls: number;
}

/** Control frames use seq 0 and agent "gateway"; real records start at seq 1. */
export const CONTROL_SEQ = 0;
export const STREAM_DROPPED = "stream-dropped";
export const SESSION_CLOSED = "session-closed";

export type SendResult =
  | { sent: true }
  | { sent: false; reason: "composer-disabled" | "conflict" | "http-error" };
