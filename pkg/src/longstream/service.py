"""Streaming session server.

One process serves two transports speaking the same newline-delimited
JSON message protocol: a raw TCP socket (scriptable clients) and a
WebSocket endpoint on the next port (browsers).  Each session owns a
generation loop thread plus a writer thread behind a bounded queue, so
a slow client throttles generation instead of growing a buffer.
Control messages (SwitchPrompt, Stop) apply at the next chunk boundary;
an accepted switch triggers exactly one recache.
"""

import base64
import json
import logging
import os
import queue
import socket
import socketserver
import threading
import time

import numpy as np

from . import checkpoint as ckpt
from .errors import LongstreamError, MissingArtifactError, UnknownPromptError
from .inference import (DenoiseSchedule, STRATEGIES, generate_next_chunk, recache,
                        recache_window)
from .toyworld import GRID, encode_prompt, frame_positions, render

log = logging.getLogger(__name__)

OUTBOUND_QUEUE_FRAMES = 64
MAX_SESSION_FRAMES = 1_000_000


class CheckpointRegistry:
    """Lazy-loading registry of checkpoints under one directory."""

    def __init__(self, root):
        self.root = root
        self._cache = {}
        self._lock = threading.Lock()

    def ids(self):
        if not os.path.isdir(self.root):
            return []
        return sorted(os.path.splitext(f)[0] for f in os.listdir(self.root)
                      if f.endswith(".bin"))

    def load(self, checkpoint_id):
        with self._lock:
            if checkpoint_id not in self._cache:
                path = os.path.join(self.root, f"{checkpoint_id}.bin")
                if not os.path.exists(path):
                    raise MissingArtifactError(f"no checkpoint {checkpoint_id!r}")
                self._cache[checkpoint_id] = ckpt.load_model(path)
            return self._cache[checkpoint_id]


def _frame_message(index, frame_tokens):
    img = render(frame_tokens)
    pixels = base64.b64encode((img * 255).astype(np.uint8).tobytes()).decode("ascii")
    x, y = frame_positions(frame_tokens)[0]
    return {"type": "Frame", "index": index, "width": GRID, "height": GRID,
            "pixels_base64": pixels, "latent_preview": [float(x), float(y)]}


class Session:
    """One generation loop bound to one client transport."""

    def __init__(self, registry, transport):
        self.registry = registry
        self.transport = transport  # has send_line / recv_line / close
        self.outq = queue.Queue(maxsize=OUTBOUND_QUEUE_FRAMES)
        self.ctrl = queue.Queue()
        self.alive = True

    # -- plumbing ------------------------------------------------------------

    def send(self, msg):
        self.outq.put(json.dumps(msg))

    def _writer(self):
        while True:
            line = self.outq.get()
            if line is None:
                return
            try:
                self.transport.send_line(line)
            except OSError:
                self.alive = False
                return

    def _reader(self):
        while self.alive:
            try:
                line = self.transport.recv_line()
            except OSError:
                line = None
            if line is None:
                self.ctrl.put({"type": "Stop"})
                return
            if not line.strip():
                continue
            try:
                self.ctrl.put(json.loads(line))
            except json.JSONDecodeError:
                self.ctrl.put({"type": "_bad_json"})

    # -- protocol ------------------------------------------------------------

    def run(self):
        writer = threading.Thread(target=self._writer, daemon=True)
        writer.start()
        try:
            self._run_protocol()
        except Exception:
            log.exception("session failed")
            try:
                self.send({"type": "Error", "code": "internal",
                           "message": "session failed; see server log"})
            except Exception:
                pass
        finally:
            self.alive = False
            self.outq.put(None)
            writer.join(timeout=5)
            self.transport.close()

    def _run_protocol(self):
        first = self.transport.recv_line()
        if first is None:
            return
        try:
            start = json.loads(first)
        except json.JSONDecodeError:
            self.send({"type": "Error", "code": "protocol", "message": "not JSON"})
            return
        if start.get("type") != "Start":
            self.send({"type": "Error", "code": "protocol",
                       "message": "first message must be Start"})
            return
        try:
            model = self.registry.load(str(start.get("checkpoint_id")))
        except MissingArtifactError:
            self.send({"type": "Error", "code": "no_checkpoint",
                       "message": f"known checkpoints: {self.registry.ids()}"})
            return
        strategy = start.get("strategy", "recache")
        if strategy not in STRATEGIES:
            self.send({"type": "Error", "code": "protocol",
                       "message": f"strategy must be one of {list(STRATEGIES)}"})
            return
        try:
            ladder = start.get("schedule")
            schedule = DenoiseSchedule(tuple(ladder)) if ladder else DenoiseSchedule()
            active = encode_prompt(start.get("initial_prompt", "stop"))
        except UnknownPromptError as e:
            self.send({"type": "Error", "code": "bad_prompt", "message": str(e)})
            return
        except LongstreamError as e:
            self.send({"type": "Error", "code": "protocol", "message": str(e)})
            return

        reader = threading.Thread(target=self._reader, daemon=True)
        reader.start()
        self._generate(model, schedule, strategy, active,
                       int(start.get("seed", 0)))

    def _generate(self, model, schedule, strategy, active, seed):
        cfg = model.config
        tpf, fpc = cfg.tokens_per_frame, cfg.frames_per_chunk
        rng = np.random.default_rng(seed)
        caches = model.new_caches()
        frames = np.zeros((0, cfg.latent_dim))
        frames_offset = 0  # global frame index of frames[0]
        frame_index = 0
        started = time.perf_counter()
        pending_switch = None
        while self.alive and frame_index < MAX_SESSION_FRAMES:
            stop = False
            while True:
                try:
                    msg = self.ctrl.get_nowait()
                except queue.Empty:
                    break
                kind = msg.get("type")
                if kind == "Stop":
                    stop = True
                elif kind == "SwitchPrompt":
                    try:
                        pending_switch = encode_prompt(msg.get("text", ""))
                    except UnknownPromptError as e:
                        self.send({"type": "Error", "code": "bad_prompt",
                                   "message": str(e)})
                else:
                    self.send({"type": "Error", "code": "protocol",
                               "message": f"unknown message type {kind!r}"})
            if stop:
                break
            if pending_switch is not None:
                active = pending_switch
                pending_switch = None
                if strategy == "clear":
                    for c in caches:
                        c.clear()
                elif strategy == "recache":
                    keep = recache_window(frame_index, cfg.layout)
                    rel = (frame_index - keep) - frames_offset
                    caches = recache(model, frames[rel * tpf:], active.vec,
                                     frame_index - keep)
                self.send({"type": "Switched", "frame_index": frame_index,
                           "prompt": active.command})
            t0 = time.perf_counter()
            chunk = generate_next_chunk(model, caches, active.vec, schedule, rng)
            latency_us = int((time.perf_counter() - t0) * 1e6)
            chunk_frames = chunk.data
            frames = np.concatenate([frames, chunk_frames])
            # keep only what a recache could retain
            max_keep = (cfg.layout.window_frames + fpc) * tpf
            if frames.shape[0] > max_keep:
                drop = (frames.shape[0] - max_keep) // tpf
                frames = frames[drop * tpf:]
                frames_offset += drop
            for f in range(fpc):
                self.send(_frame_message(frame_index,
                                         chunk_frames[f * tpf:(f + 1) * tpf]))
                frame_index += 1
            elapsed = time.perf_counter() - started
            _, _, resident = caches[0].resident_size()
            self.send({"type": "Stats", "fps": frame_index / max(elapsed, 1e-9),
                       "resident_tokens": resident, "chunk_latency_us": latency_us})
        self.send({"type": "Ended", "total_frames": frame_index})


class _TcpTransport:
    def __init__(self, sock):
        self.sock = sock
        self._file = sock.makefile("rb")

    def send_line(self, line):
        self.sock.sendall(line.encode("utf-8") + b"\n")

    def recv_line(self):
        raw = self._file.readline()
        if not raw:
            return None
        return raw.decode("utf-8", errors="replace")

    def close(self):
        try:
            self._file.close()
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class _WsTransport:
    def __init__(self, ws):
        self.ws = ws

    def send_line(self, line):
        from websockets.exceptions import ConnectionClosed
        try:
            self.ws.send(line)
        except ConnectionClosed as e:
            raise OSError("websocket closed") from e

    def recv_line(self):
        from websockets.exceptions import ConnectionClosed
        try:
            return self.ws.recv()
        except ConnectionClosed:
            return None

    def close(self):
        try:
            self.ws.close()
        except Exception:
            pass


class SessionServer:
    """TCP on ``port``, WebSocket on ``port + 1``."""

    def __init__(self, registry, host, port):
        self.registry = registry
        self.host = host
        self.port = port
        self.ws_port = port + 1
        self._threads = []
        self._ws_server = None
        self._tcp_server = None
        self._stopped = threading.Event()

    def start(self):
        registry = self.registry

        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                # small send buffer: backpressure reaches the generation
                # loop instead of parking seconds of video in the kernel
                self.request.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, 65536)
                Session(registry, _TcpTransport(self.request)).run()

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._tcp_server = Server((self.host, self.port), Handler)
        self.port = self._tcp_server.server_address[1]
        self.ws_port = self.port + 1
        t = threading.Thread(target=self._tcp_server.serve_forever, daemon=True)
        t.start()
        self._threads.append(t)

        from websockets.sync.server import serve as ws_serve

        def ws_handler(ws):
            Session(registry, _WsTransport(ws)).run()

        self._ws_server = ws_serve(ws_handler, self.host, self.ws_port)
        t = threading.Thread(target=self._ws_server.serve_forever, daemon=True)
        t.start()
        self._threads.append(t)
        return self

    def wait(self):
        self._stopped.wait()

    def stop(self):
        if self._tcp_server:
            self._tcp_server.shutdown()
        if self._ws_server:
            self._ws_server.shutdown()
        self._stopped.set()


def serve(checkpoint_dir, bind="127.0.0.1:8765"):
    host, _, port = bind.partition(":")
    registry = CheckpointRegistry(checkpoint_dir)
    return SessionServer(registry, host or "127.0.0.1", int(port or 8765)).start()
