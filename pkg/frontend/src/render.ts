// Canvas drawing: nearest-neighbor 8x upscale of the 32x32 frames, plus the
// timeline strip. Everything here is a thin view over the pure models.

import { decodeBase64Gray, grayToRgba } from "./frames.js";
import type { FrameMsg } from "./protocol.js";
import { timelineView, type TimelineView } from "./timeline.js";
import type { UiSessionState } from "./session.js";

export const UPSCALE = 8;

export function drawFrame(canvas: HTMLCanvasElement, frame: FrameMsg): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const gray = decodeBase64Gray(frame.pixels_base64, frame.width, frame.height);
  const img = new ImageData(grayToRgba(gray), frame.width, frame.height);
  const off = new OffscreenCanvas(frame.width, frame.height);
  const offCtx = off.getContext("2d");
  if (!offCtx) return;
  offCtx.putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false; // nearest-neighbor: blob position readable
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, frame.width * UPSCALE, frame.height * UPSCALE);
}

export function drawTimeline(canvas: HTMLCanvasElement, state: UiSessionState): TimelineView {
  const view = timelineView(state);
  const ctx = canvas.getContext("2d");
  if (!ctx) return view;
  const w = canvas.width;
  const h = canvas.height;
  ctx.clearRect(0, 0, w, h);
  ctx.fillStyle = "#202830";
  ctx.fillRect(0, 0, w, h);
  // latency sparkline
  ctx.strokeStyle = "#5fb0ff";
  ctx.beginPath();
  view.spark.forEach((p, i) => {
    const x = p.x * w;
    const y = 4 + p.y * (h - 14);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
  // switch/recache markers
  ctx.fillStyle = "#ffb347";
  for (const m of view.markers) {
    const x = m.x * w;
    ctx.fillRect(x - 1, 0, 2, h);
  }
  return view;
}

export function statsLine(state: UiSessionState): string {
  if (!state.stats) return "waiting for stats";
  const s = state.stats;
  return (
    `${s.fps.toFixed(1)} fps | resident ${s.resident_tokens} tok | ` +
    `chunk ${(s.chunk_latency_us / 1000).toFixed(1)} ms`
  );
}
