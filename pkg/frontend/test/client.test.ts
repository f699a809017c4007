import { describe, expect, it } from "vitest";
import { SessionClient, type SocketLike } from "../src/client.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  onopen: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  open(): void {
    this.onopen?.();
  }

  push(msg: unknown): void {
    this.onmessage?.({ data: JSON.stringify(msg) });
  }
}

function makeClient() {
  const sock = new FakeSocket();
  const client = new SessionClient(
    "ws://test",
    { checkpointId: "toy", schedule: null, strategy: "recache", seed: 1, initialPrompt: "right" },
    () => sock,
  );
  client.connect();
  sock.open();
  return { sock, client };
}

describe("SessionClient", () => {
  it("sends Start on open with exact wire fields", () => {
    const { sock } = makeClient();
    expect(sock.sent).toHaveLength(1);
    const start = JSON.parse(sock.sent[0]);
    expect(start).toEqual({
      type: "Start",
      checkpoint_id: "toy",
      schedule: null,
      strategy: "recache",
      seed: 1,
      initial_prompt: "right",
    });
  });

  it("applies frames and stats from the socket", () => {
    const { sock, client } = makeClient();
    sock.push({
      type: "Frame", index: 0, width: 32, height: 32, pixels_base64: "",
      latent_preview: [0.5, 0.5],
    });
    sock.push({ type: "Stats", fps: 40, resident_tokens: 48, chunk_latency_us: 500 });
    expect(client.state.status).toBe("live");
    expect(client.state.lastFrameIndex).toBe(0);
    expect(client.state.stats?.fps).toBe(40);
  });

  it("prompt submission is optimistic until Switched", () => {
    const { sock, client } = makeClient();
    client.switchPrompt("left");
    expect(client.state.pendingPrompt).toBe("left");
    expect(client.state.activePrompt).toBe("right");
    expect(JSON.parse(sock.sent[1])).toEqual({ type: "SwitchPrompt", text: "left" });
    sock.push({ type: "Switched", frame_index: 6, prompt: "left" });
    expect(client.state.pendingPrompt).toBeNull();
    expect(client.state.activePrompt).toBe("left");
    expect(client.state.markers).toHaveLength(1);
  });

  it("only control messages ever go to the server", () => {
    const { sock, client } = makeClient();
    client.switchPrompt("up");
    client.stop();
    const kinds = sock.sent.map((s) => JSON.parse(s).type);
    expect(kinds).toEqual(["Start", "SwitchPrompt", "Stop"]);
  });

  it("protocol violations kill the session visibly", () => {
    const { sock, client } = makeClient();
    sock.onmessage?.({ data: "garbage!!" });
    expect(client.state.status).toBe("dead");
    expect(client.state.errors[0].code).toBe("protocol");
    expect(sock.closed).toBe(true);
  });

  it("disconnect keeps the timeline and marks dead", () => {
    const { sock, client } = makeClient();
    sock.push({ type: "Switched", frame_index: 3, prompt: "down" });
    sock.close();
    expect(client.state.status).toBe("dead");
    expect(client.state.markers).toHaveLength(1);
  });

  it("Ended leads to scrub-only status", () => {
    const { sock, client } = makeClient();
    sock.push({ type: "Ended", total_frames: 12 });
    expect(client.state.status).toBe("ended");
  });
});
