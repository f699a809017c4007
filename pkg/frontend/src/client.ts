// Session client: owns one socket, feeds the reducer, exposes the state.
// The socket is injected (anything WebSocket-shaped), so tests drive it
// with a fake and the browser passes the real constructor.

import {
  encodeClientMessage,
  parseServerMessage,
  ProtocolViolation,
  type ClientMessage,
} from "./protocol.js";
import {
  applyServerMessage,
  initialState,
  markConnectionDead,
  requestPrompt,
  type UiSessionState,
} from "./session.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onopen: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface StartParams {
  checkpointId: string;
  schedule: number[] | null;
  strategy: "clear" | "keep" | "recache";
  seed: number;
  initialPrompt: string;
}

export class SessionClient {
  state: UiSessionState;
  private sock: SocketLike | null = null;
  private listeners: ((s: UiSessionState) => void)[] = [];

  constructor(
    private readonly url: string,
    private readonly params: StartParams,
    private readonly factory: SocketFactory,
  ) {
    this.state = initialState(params.initialPrompt);
  }

  onChange(fn: (s: UiSessionState) => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  connect(): void {
    this.state = initialState(this.params.initialPrompt);
    const sock = this.factory(this.url);
    this.sock = sock;
    sock.onopen = () => {
      this.sendRaw({
        type: "Start",
        checkpoint_id: this.params.checkpointId,
        schedule: this.params.schedule,
        strategy: this.params.strategy,
        seed: this.params.seed,
        initial_prompt: this.params.initialPrompt,
      });
    };
    sock.onmessage = (ev) => {
      try {
        const msg = parseServerMessage(String(ev.data));
        this.state = applyServerMessage(this.state, msg);
      } catch (e) {
        if (e instanceof ProtocolViolation || e instanceof Error) {
          this.state = {
            ...markConnectionDead(this.state),
            errors: [...this.state.errors, { code: "protocol", message: e.message }],
          };
          sock.close();
        }
      }
      this.emit();
    };
    sock.onclose = () => {
      this.state = markConnectionDead(this.state);
      this.emit();
    };
    sock.onerror = () => {
      this.state = markConnectionDead(this.state);
      this.emit();
    };
    this.emit();
  }

  private sendRaw(msg: ClientMessage): void {
    this.sock?.send(encodeClientMessage(msg));
  }

  switchPrompt(text: string): void {
    // optimistic in the input, authoritative only when Switched arrives
    this.state = requestPrompt(this.state, text);
    this.sendRaw({ type: "SwitchPrompt", text });
    this.emit();
  }

  stop(): void {
    this.sendRaw({ type: "Stop" });
  }

  disconnect(): void {
    this.sock?.close();
  }
}
