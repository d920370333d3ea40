"""WebSocket front door for the teleoperation service.

All protocol logic lives in :mod:`forcesim.teleop`; this module only
moves JSON text frames between sockets and the service and keeps the
simulation ticking at a wall-clock rate. The tick task never awaits the
network: outbound messages go through per-client :class:`Outbox` queues
(state updates drop oldest under backpressure, replies never drop) and
a per-client pump task does the actual sends.

The wall-clock rate paces the loop only; simulated time advances by
exactly dt per tick no matter how late the timer fires, so trajectories
are identical at any rate. Conformance tests run slowed down
(``--rate 5``) to make command-to-tick alignment reliable on a loaded
machine.

With ``--with-ui`` the same port also serves the static cockpit files
over plain HTTP (anything that is not a WebSocket upgrade).
"""

from __future__ import annotations

import asyncio
import json
import mimetypes
import os
import signal
from typing import Optional

from websockets.asyncio.server import serve
from websockets.datastructures import Headers
from websockets.exceptions import ConnectionClosed
from websockets.http11 import Response

from .teleop import Outbox, TeleopService

DEFAULT_BIND = "127.0.0.1"
DEFAULT_PORT = 8765
DEFAULT_RATE = 50.0


def bind_defaults() -> tuple:
    """(host, port) after FORCESIM_BIND / FORCESIM_PORT overrides."""
    host = os.environ.get("FORCESIM_BIND", DEFAULT_BIND)
    port = int(os.environ.get("FORCESIM_PORT", DEFAULT_PORT))
    return host, port


class TeleopServer:
    """One TeleopService shared by any number of socket clients."""

    def __init__(self, service: Optional[TeleopService] = None,
                 rate: float = DEFAULT_RATE, ui_root: Optional[str] = None,
                 max_outbox: int = 64):
        if rate <= 0:
            raise ValueError("rate must be positive (Hz)")
        self.service = service if service is not None else TeleopService()
        self.rate = float(rate)
        self.ui_root = os.path.abspath(ui_root) if ui_root else None
        self.max_outbox = max_outbox
        self._clients = {}          # connection -> (client_id, Outbox, Event)
        self._next_client = 0
        self._stopping = asyncio.Event()

    # -- fan-out -----------------------------------------------------------

    def _post(self, entry, msgs) -> None:
        _, outbox, wake = entry
        for m in msgs:
            outbox.put(m)
        if msgs:
            wake.set()

    def _broadcast(self, msgs) -> None:
        for entry in self._clients.values():
            self._post(entry, msgs)

    # -- per-connection tasks ------------------------------------------------

    async def _pump(self, ws, outbox: Outbox, wake: asyncio.Event) -> None:
        while True:
            await wake.wait()
            wake.clear()
            for msg in outbox.drain():
                await ws.send(json.dumps(msg))

    async def handler(self, ws) -> None:
        self._next_client += 1
        client_id = f"c{self._next_client}"
        entry = (client_id, Outbox(self.max_outbox), asyncio.Event())
        self._clients[ws] = entry
        pump = asyncio.create_task(self._pump(ws, entry[1], entry[2]))
        try:
            async for raw in ws:
                try:
                    msg = json.loads(raw)
                except (json.JSONDecodeError, UnicodeDecodeError):
                    self._post(entry, [self.service._error(
                        "bad_json", "message is not valid JSON")])
                    continue
                self._post(entry,
                           self.service.handle_message(client_id, msg))
        except ConnectionClosed:
            pass
        finally:
            pump.cancel()
            self._clients.pop(ws, None)
            self.service.client_gone(client_id)

    # -- simulation tick task ------------------------------------------------

    async def tick_loop(self) -> None:
        period = 1.0 / self.rate
        loop = asyncio.get_running_loop()
        next_at = loop.time() + period
        while not self._stopping.is_set():
            delay = next_at - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            # Late ticks don't accumulate: re-anchor instead of bursting,
            # simulated time advances one dt either way.
            next_at = max(next_at + period, loop.time())
            msgs = self.service.tick()
            self._broadcast(msgs)
            if not self.service.alive:
                # NonFiniteState: the error just went out; let the pumps
                # flush, then shut down.
                await asyncio.sleep(0.1)
                self._stopping.set()

    # -- optional static UI ---------------------------------------------------

    def process_request(self, connection, request):
        if self.ui_root is None:
            return None
        if "upgrade" in request.headers.get("Connection", "").lower():
            return None
        path = request.path.split("?", 1)[0]
        if path.endswith("/"):
            path += "index.html"
        full = os.path.abspath(os.path.join(self.ui_root, path.lstrip("/")))
        if not full.startswith(self.ui_root + os.sep) \
                and full != self.ui_root:
            return connection.respond(403, "forbidden\n")
        if not os.path.isfile(full):
            return connection.respond(404, "not found\n")
        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
        with open(full, "rb") as fh:
            body = fh.read()
        headers = Headers([("Content-Type", ctype),
                           ("Content-Length", str(len(body)))])
        return Response(200, "OK", headers, body)

    # -- lifecycle -------------------------------------------------------------

    def stop(self) -> None:
        self._stopping.set()

    async def run(self, host: str, port: int,
                  announce=print) -> None:
        """Serve until stop(); announces the resolved address on stdout
        (port 0 picks an ephemeral port, tests scrape the line)."""
        async with serve(self.handler, host, port,
                         process_request=self.process_request) as server:
            actual = server.sockets[0].getsockname()
            announce(f"forcesim teleop listening on "
                     f"ws://{actual[0]}:{actual[1]}", flush=True)
            ticker = asyncio.create_task(self.tick_loop())
            try:
                await self._stopping.wait()
            finally:
                ticker.cancel()


def run_server(host: Optional[str] = None, port: Optional[int] = None,
               service: Optional[TeleopService] = None,
               rate: float = DEFAULT_RATE,
               ui_root: Optional[str] = None) -> None:
    """Blocking entry point used by the CLI; Ctrl-C stops cleanly."""
    env_host, env_port = bind_defaults()
    host = host if host is not None else env_host
    port = port if port is not None else env_port
    server = TeleopServer(service=service, rate=rate, ui_root=ui_root)

    async def main():
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(sig, server.stop)
            except NotImplementedError:
                pass
        await server.run(host, port)

    asyncio.run(main())
