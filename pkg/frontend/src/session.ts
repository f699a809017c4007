// Session state machine: a pure reducer over server messages. All numbers
// shown in the UI come from server Stats; the reducer never recomputes them.

import type { ServerMessage, FrameMsg, StatsMsg } from "./protocol.js";

export type ConnectionStatus = "connecting" | "live" | "ended" | "dead";

export interface TimelineMarker {
  frameIndex: number;
  fromPrompt: string;
  toPrompt: string;
}

export interface UiSessionState {
  status: ConnectionStatus;
  frames: FrameMsg[]; // rolling buffer, newest last
  frameBufferSize: number;
  lastFrameIndex: number;
  activePrompt: string;
  pendingPrompt: string | null; // optimistic; authoritative only on Switched
  markers: TimelineMarker[];
  latencies: { chunkIndexGuess: number; latencyUs: number }[];
  stats: StatsMsg | null;
  errors: { code: string; message: string }[];
  totalFrames: number | null;
}

export function initialState(initialPrompt: string, frameBufferSize = 64): UiSessionState {
  return {
    status: "connecting",
    frames: [],
    frameBufferSize,
    lastFrameIndex: -1,
    activePrompt: initialPrompt,
    pendingPrompt: null,
    markers: [],
    latencies: [],
    stats: null,
    errors: [],
    totalFrames: null,
  };
}

export class FrameOrderViolation extends Error {}

export function applyServerMessage(
  state: UiSessionState,
  msg: ServerMessage,
): UiSessionState {
  switch (msg.type) {
    case "Frame": {
      if (msg.index <= state.lastFrameIndex) {
        throw new FrameOrderViolation(
          `frame index went backwards: ${msg.index} after ${state.lastFrameIndex}`,
        );
      }
      const frames = [...state.frames, msg];
      if (frames.length > state.frameBufferSize) {
        frames.splice(0, frames.length - state.frameBufferSize);
      }
      return { ...state, status: "live", frames, lastFrameIndex: msg.index };
    }
    case "Switched": {
      const marker = {
        frameIndex: msg.frame_index,
        fromPrompt: state.activePrompt,
        toPrompt: msg.prompt,
      };
      return {
        ...state,
        activePrompt: msg.prompt,
        pendingPrompt: null,
        markers: [...state.markers, marker],
      };
    }
    case "Stats":
      return {
        ...state,
        stats: msg,
        latencies: [
          ...state.latencies,
          { chunkIndexGuess: state.latencies.length, latencyUs: msg.chunk_latency_us },
        ],
      };
    case "Error":
      return { ...state, errors: [...state.errors, { code: msg.code, message: msg.message }] };
    case "Ended":
      return { ...state, status: "ended", totalFrames: msg.total_frames };
  }
}

export function markConnectionDead(state: UiSessionState): UiSessionState {
  // disconnect keeps the timeline; the view offers a reconnect affordance
  return state.status === "ended" ? state : { ...state, status: "dead" };
}

export function requestPrompt(state: UiSessionState, text: string): UiSessionState {
  return { ...state, pendingPrompt: text };
}
