"""Live deployment plumbing: TCP links between nodes, the real-time master
runtime (optionally with in-process simulated slaves), and the daemon entry
points used by the CLI."""

from __future__ import annotations

import random
import socket
import sys
import threading
import time

from .core import VibedaqError
from .master import MasterCoordinator
from .protocol import Hello, Message, StreamDecoder, encode_frame
from .runtime import Clock, EventLoop
from .sensorbus import build_slave_bus, resolve_scenario
from .slave import SlaveController
from .transport import LinkDown, LossSpec, SimLink

CONNECT_RETRY_S = 1.0
CONNECT_DEADLINE_S = 60.0


def _epoch_offset_us(loop: EventLoop) -> int:
    return time.time_ns() // 1000 - loop.now_us()


class TcpLink:
    """Frame sender over one socket; concurrent senders are serialized."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._lock = threading.Lock()

    def send(self, msg: Message) -> None:
        data = encode_frame(msg)
        try:
            with self._lock:
                self._sock.sendall(data)
        except OSError as exc:
            raise LinkDown(str(exc)) from exc

    def reconnect(self) -> bool:
        return False  # the accepting side waits for the peer to dial back in

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class SlaveUplink:
    """The slave's connection to the master; reconnect() re-dials and re-greets."""

    def __init__(self, host: str, port: int, hello: Hello, on_message, on_drop=None):
        self._addr = (host, port)
        self._hello = hello
        self._on_message = on_message
        self._on_drop = on_drop
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    def connect(self, deadline_s: float = CONNECT_DEADLINE_S) -> bool:
        start = time.monotonic()
        while time.monotonic() - start < deadline_s:
            if self.reconnect():
                return True
            time.sleep(CONNECT_RETRY_S)
        return False

    def reconnect(self) -> bool:
        try:
            sock = socket.create_connection(self._addr, timeout=5)
        except OSError:
            return False
        sock.settimeout(None)
        with self._lock:
            self._sock = sock
        threading.Thread(target=self._reader, args=(sock,), daemon=True).start()
        try:
            self.send(self._hello)
        except LinkDown:
            return False
        return True

    def send(self, msg: Message) -> None:
        with self._lock:
            sock = self._sock
            if sock is None:
                raise LinkDown("not connected")
            try:
                sock.sendall(encode_frame(msg))
            except OSError as exc:
                self._sock = None
                raise LinkDown(str(exc)) from exc

    def _reader(self, sock: socket.socket) -> None:
        decoder = StreamDecoder()
        try:
            while True:
                data = sock.recv(65536)
                if not data:
                    break
                for msg in decoder.feed(data):
                    self._on_message(msg)
        except OSError:
            pass
        finally:
            with self._lock:
                if self._sock is sock:
                    self._sock = None
            if self._on_drop is not None:
                self._on_drop()

    def close(self) -> None:
        with self._lock:
            if self._sock is not None:
                try:
                    self._sock.close()
                except OSError:
                    pass
                self._sock = None


class MasterRuntime:
    """A live master: event loop, coordinator, and optional in-process slaves.

    In-process slaves run with real-time pacing (threaded acquisition) and
    talk to the coordinator over in-memory framed links, so the whole stack
    behaves like a deployment while living in one process.
    """

    def __init__(
        self,
        out_dir: str,
        sim_slaves: int = 0,
        sim_sensors: int = 3,
        scenario=None,
        seed: int = 0,
        start_delay_us: int | None = None,
        clock_skew_us: int = 100_000,
    ):
        self.loop = EventLoop()
        self.loop.start()
        self.clock = Clock(self.loop, _epoch_offset_us(self.loop))
        self.coordinator = MasterCoordinator(self.loop, self.clock, out_dir)
        if start_delay_us is not None:
            self.coordinator.start_delay_us = start_delay_us
        self.sim_uplinks: list[SimLink] = []
        self._sim_slaves: list[SlaveController] = []
        self._tcp_server: socket.socket | None = None
        self._scenario_arg = scenario
        self._seed = seed
        if sim_slaves:
            self._attach_sim_slaves(sim_slaves, sim_sensors, scenario, seed, clock_skew_us)

    # -- in-process simulated slaves --------------------------------------------

    def _attach_sim_slaves(self, n, sensors_per_slave, scenario, seed, skew_us) -> None:
        root = random.Random(seed)
        sensors = list(range(sensors_per_slave))
        for i in range(n):
            slave_id = i + 1
            scenario_seed = root.randrange(2**31)
            skew = root.randrange(0, skew_us + 1)
            clock = Clock(self.loop, _epoch_offset_us(self.loop) + skew)
            uplink = SimLink(
                self.loop,
                lambda msg, sid=slave_id: self.coordinator.handle_message(sid, msg),
                latency_us=1000,
                loss=LossSpec(),
                rng=random.Random(root.randrange(2**31)),
            )

            def bus_factory(cfg, _sensors=sensors, _seed=scenario_seed):
                name = scenario or cfg.test_type.value.lower()
                resolved = resolve_scenario(name) if isinstance(name, str) else name
                bus, engine = build_slave_bus(_sensors, resolved, cfg.odr_hz, cfg.range_g, _seed)
                return bus, engine.tick

            holder: dict = {}
            downlink = SimLink(
                self.loop, lambda msg, h=holder: h["slave"].handle_message(msg), latency_us=1000
            )
            slave = SlaveController(
                slave_id=slave_id,
                sensors=sensors,
                clock=clock,
                link=uplink,
                bus_factory=bus_factory,
                threaded_acquisition=True,
                pump_interval_us=100_000,
            )
            holder["slave"] = slave
            self.coordinator.register_slave(slave.hello_message(), downlink)
            self.sim_uplinks.append(uplink)
            self._sim_slaves.append(slave)

    def set_sim_loss(self, probability: float) -> None:
        if not self.sim_uplinks:
            raise VibedaqError("no in-process slaves to inject loss into")
        for link in self.sim_uplinks:
            link.loss.probability = probability

    # -- TCP server for external slaves ------------------------------------------

    def serve_tcp(self, host: str, port: int) -> tuple[str, int]:
        server = socket.create_server((host, port))
        self._tcp_server = server
        threading.Thread(target=self._accept_loop, args=(server,), daemon=True).start()
        return server.getsockname()[:2]

    def _accept_loop(self, server: socket.socket) -> None:
        while True:
            try:
                conn, _ = server.accept()
            except OSError:
                return
            threading.Thread(target=self._connection_reader, args=(conn,), daemon=True).start()

    def _connection_reader(self, conn: socket.socket) -> None:
        decoder = StreamDecoder()
        slave_id = None
        link = TcpLink(conn)
        try:
            while True:
                data = conn.recv(65536)
                if not data:
                    break
                for msg in decoder.feed(data):
                    if isinstance(msg, Hello):
                        slave_id = msg.slave_id
                        self.coordinator.register_slave(msg, link)
                    elif slave_id is not None:
                        self.coordinator.handle_message(slave_id, msg)
        except OSError:
            pass
        finally:
            link.close()
            if slave_id is not None:
                self.coordinator.mark_disconnected(slave_id)

    def stop(self) -> None:
        if self._tcp_server is not None:
            try:
                self._tcp_server.close()
            except OSError:
                pass
        for slave in self._sim_slaves:
            slave._stop_event.set()
        self.loop.stop()


# --- daemon entry points ----------------------------------------------------


def run_master_daemon(listen, api, out_dir, sim_slaves=0, sim_sensors=3, scenario=None,
                      seed=0, static_dir=None, verbose=False) -> int:
    import uvicorn

    from .api import create_app

    runtime = MasterRuntime(
        out_dir, sim_slaves=sim_slaves, sim_sensors=sim_sensors, scenario=scenario, seed=seed
    )
    host, port = runtime.serve_tcp(*listen)
    if verbose:
        print(f"slave endpoint on {host}:{port}; API on {api[0]}:{api[1]}")
    app = create_app(runtime, static_dir=static_dir)
    try:
        uvicorn.run(app, host=api[0], port=api[1], log_level="info" if verbose else "warning")
    except KeyboardInterrupt:
        pass
    finally:
        runtime.stop()
    return 0


class TcpSlaveNode:
    """A live slave over TCP: event loop, uplink, and a threaded acquisition."""

    def __init__(self, slave_id, master, sensors, scenario=None, seed=0,
                 pump_interval_us: int = 100_000):
        self.loop = EventLoop()
        self.loop.start()
        clock = Clock(self.loop, _epoch_offset_us(self.loop))
        sensors = list(sensors)

        def on_message(msg):
            self.loop.call_soon(lambda: self.controller.handle_message(msg))

        def on_drop():
            self.loop.call_soon(self.controller._on_link_down)

        self.uplink = SlaveUplink(
            master[0], master[1], Hello(slave_id, tuple(sensors)), on_message, on_drop
        )

        def bus_factory(cfg):
            name = scenario or cfg.test_type.value.lower()
            resolved = resolve_scenario(name) if isinstance(name, str) else name
            bus, engine = build_slave_bus(sensors, resolved, cfg.odr_hz, cfg.range_g, seed)
            return bus, engine.tick

        self.controller = SlaveController(
            slave_id=slave_id,
            sensors=sensors,
            clock=clock,
            link=self.uplink,
            bus_factory=bus_factory,
            threaded_acquisition=True,
            pump_interval_us=pump_interval_us,
        )

    def connect(self, deadline_s: float = CONNECT_DEADLINE_S) -> bool:
        return self.uplink.connect(deadline_s)

    def stop(self) -> None:
        self.controller._stop_event.set()
        self.uplink.close()
        self.loop.stop()


def run_slave_daemon(slave_id, master, sensors, scenario=None, seed=0, verbose=False) -> int:
    node = TcpSlaveNode(slave_id, master, sensors, scenario=scenario, seed=seed)
    if not node.connect():
        print(f"error: master at {master[0]}:{master[1]} unreachable for 60 s", file=sys.stderr)
        node.stop()
        return 3
    if verbose:
        print(f"slave {slave_id} connected to {master[0]}:{master[1]}")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        pass
    finally:
        node.stop()
    return 0
