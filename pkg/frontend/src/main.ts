// Browser entry: wires DOM controls to a SessionClient.

import { SessionClient, type SocketLike } from "./client.js";
import { PROMPT_COMMANDS } from "./protocol.js";
import { drawFrame, drawTimeline, statsLine, UPSCALE } from "./render.js";
import { markerAt, timelineView } from "./timeline.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function wsFactory(url: string): SocketLike {
  return new WebSocket(url) as unknown as SocketLike;
}

export function boot(): void {
  const canvas = el<HTMLCanvasElement>("view");
  canvas.width = 32 * UPSCALE;
  canvas.height = 32 * UPSCALE;
  const timeline = el<HTMLCanvasElement>("timeline");
  const statsEl = el<HTMLDivElement>("stats");
  const promptEl = el<HTMLInputElement>("prompt");
  const bannerEl = el<HTMLDivElement>("banner");
  const markerTip = el<HTMLDivElement>("marker-tip");
  const buttons = el<HTMLDivElement>("buttons");
  const form = el<HTMLFormElement>("prompt-form");
  const connectBtn = el<HTMLButtonElement>("connect");
  const stopBtn = el<HTMLButtonElement>("stop");

  const params = new URLSearchParams(location.search);
  const server = params.get("server") ?? `ws://${location.hostname}:8766`;
  const checkpoint = params.get("checkpoint") ?? "checkpoint";

  let client: SessionClient | null = null;
  let scrubIndex = -1;

  function redraw(): void {
    if (!client) return;
    const s = client.state;
    const frames = s.frames;
    if (frames.length) {
      const pick =
        s.status === "ended" && scrubIndex >= 0
          ? frames[Math.min(scrubIndex, frames.length - 1)]
          : frames[frames.length - 1];
      drawFrame(canvas, pick);
    }
    drawTimeline(timeline, s);
    statsEl.textContent =
      `${statsLine(s)} | prompt: ${s.activePrompt}` +
      (s.pendingPrompt ? ` (pending: ${s.pendingPrompt})` : "");
    if (s.status === "dead") {
      bannerEl.textContent = s.errors.length
        ? `session dead: [${s.errors[s.errors.length - 1].code}] ${s.errors[s.errors.length - 1].message}`
        : "disconnected - press connect to start a new session";
      bannerEl.className = "banner error";
    } else if (s.status === "ended") {
      bannerEl.textContent = `ended after ${s.totalFrames} frames - drag the timeline to scrub`;
      bannerEl.className = "banner done";
    } else if (s.errors.length) {
      bannerEl.textContent = `[${s.errors[s.errors.length - 1].code}] ${s.errors[s.errors.length - 1].message}`;
      bannerEl.className = "banner warn";
    } else {
      bannerEl.textContent = s.status;
      bannerEl.className = "banner";
    }
  }

  function connect(): void {
    client = new SessionClient(
      server,
      {
        checkpointId: checkpoint,
        schedule: null,
        strategy: (params.get("strategy") as "clear" | "keep" | "recache") ?? "recache",
        seed: Number(params.get("seed") ?? 0),
        initialPrompt: params.get("prompt") ?? "right",
      },
      wsFactory,
    );
    scrubIndex = -1;
    client.onChange(() => requestAnimationFrame(redraw));
    client.connect();
  }

  for (const cmd of PROMPT_COMMANDS) {
    const b = document.createElement("button");
    b.textContent = cmd;
    b.addEventListener("click", () => client?.switchPrompt(cmd));
    buttons.appendChild(b);
  }
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    if (promptEl.value.trim()) client?.switchPrompt(promptEl.value.trim());
  });
  connectBtn.addEventListener("click", connect);
  stopBtn.addEventListener("click", () => client?.stop());

  timeline.addEventListener("mousemove", (ev) => {
    if (!client) return;
    const rect = timeline.getBoundingClientRect();
    const x = (ev.clientX - rect.left) / rect.width;
    const view = timelineView(client.state);
    const hit = markerAt(view, x, 0.02);
    markerTip.textContent = hit ? hit.label : "";
    if (client.state.status === "ended" && ev.buttons) {
      scrubIndex = Math.floor(x * client.state.frames.length);
      redraw();
    }
  });

  connect();
}

boot();
