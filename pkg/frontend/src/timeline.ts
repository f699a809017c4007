// Timeline model: chunk lanes, switch markers, latency sparkline geometry.
// Pure data -> draw lists, so it is testable without a canvas.

import type { UiSessionState, TimelineMarker } from "./session.js";

export interface SparkPoint {
  x: number; // 0..1
  y: number; // 0..1, 0 = fastest
  latencyUs: number;
}

export interface MarkerView {
  x: number; // 0..1 along the timeline
  label: string; // "old → new"
  marker: TimelineMarker;
}

export interface TimelineView {
  markers: MarkerView[];
  spark: SparkPoint[];
  frameSpan: number;
}

export function timelineView(state: UiSessionState): TimelineView {
  const span = Math.max(state.lastFrameIndex + 1, 1);
  const markers = state.markers.map((m) => ({
    x: m.frameIndex / span,
    label: `${m.fromPrompt} → ${m.toPrompt}`,
    marker: m,
  }));
  const lat = state.latencies;
  const maxLat = lat.reduce((a, p) => Math.max(a, p.latencyUs), 1);
  const spark = lat.map((p, i) => ({
    x: lat.length <= 1 ? 0 : i / (lat.length - 1),
    y: 1 - p.latencyUs / maxLat,
    latencyUs: p.latencyUs,
  }));
  return { markers, spark, frameSpan: span };
}

export function markerAt(view: TimelineView, x: number, tolerance = 0.01): MarkerView | null {
  let best: MarkerView | null = null;
  let bestDist = tolerance;
  for (const m of view.markers) {
    const d = Math.abs(m.x - x);
    if (d <= bestDist) {
      best = m;
      bestDist = d;
    }
  }
  return best;
}
