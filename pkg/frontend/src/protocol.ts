// Wire protocol: newline-delimited JSON messages, field names fixed by the
// server. Parsing is strict - an unknown or malformed message is a protocol
// violation the UI surfaces instead of ignoring.

export type ClientMessage =
  | {
      type: "Start";
      checkpoint_id: string;
      schedule: number[] | null;
      strategy: "clear" | "keep" | "recache";
      seed: number;
      initial_prompt: string;
    }
  | { type: "SwitchPrompt"; text: string }
  | { type: "Stop" };

export interface FrameMsg {
  type: "Frame";
  index: number;
  width: number;
  height: number;
  pixels_base64: string;
  latent_preview: [number, number];
}

export interface SwitchedMsg {
  type: "Switched";
  frame_index: number;
  prompt: string;
}

export interface StatsMsg {
  type: "Stats";
  fps: number;
  resident_tokens: number;
  chunk_latency_us: number;
}

export interface ErrorMsg {
  type: "Error";
  code: string;
  message: string;
}

export interface EndedMsg {
  type: "Ended";
  total_frames: number;
}

export type ServerMessage = FrameMsg | SwitchedMsg | StatsMsg | ErrorMsg | EndedMsg;

export class ProtocolViolation extends Error {}

function need(cond: boolean, what: string): void {
  if (!cond) throw new ProtocolViolation(`malformed server message: ${what}`);
}

export function parseServerMessage(line: string): ServerMessage {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    throw new ProtocolViolation(`not JSON: ${line.slice(0, 80)}`);
  }
  need(typeof raw === "object" && raw !== null, "not an object");
  const msg = raw as Record<string, unknown>;
  switch (msg.type) {
    case "Frame":
      need(typeof msg.index === "number" && msg.index >= 0, "Frame.index");
      need(typeof msg.width === "number" && typeof msg.height === "number", "Frame size");
      need(typeof msg.pixels_base64 === "string", "Frame.pixels_base64");
      need(
        Array.isArray(msg.latent_preview) && msg.latent_preview.length === 2,
        "Frame.latent_preview",
      );
      return msg as unknown as FrameMsg;
    case "Switched":
      need(typeof msg.frame_index === "number", "Switched.frame_index");
      need(typeof msg.prompt === "string", "Switched.prompt");
      return msg as unknown as SwitchedMsg;
    case "Stats":
      need(typeof msg.fps === "number", "Stats.fps");
      need(typeof msg.resident_tokens === "number", "Stats.resident_tokens");
      need(typeof msg.chunk_latency_us === "number", "Stats.chunk_latency_us");
      return msg as unknown as StatsMsg;
    case "Error":
      need(typeof msg.code === "string" && typeof msg.message === "string", "Error fields");
      return msg as unknown as ErrorMsg;
    case "Ended":
      need(typeof msg.total_frames === "number", "Ended.total_frames");
      return msg as unknown as EndedMsg;
    default:
      throw new ProtocolViolation(`unknown message type ${String(msg.type)}`);
  }
}

export function encodeClientMessage(msg: ClientMessage): string {
  return JSON.stringify(msg);
}

export const PROMPT_COMMANDS = [
  "right",
  "left",
  "up",
  "down",
  "up-right",
  "up-left",
  "down-right",
  "down-left",
  "stop",
] as const;
