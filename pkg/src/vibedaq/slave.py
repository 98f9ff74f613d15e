"""Slave node: applies broadcast configuration, polls the sensor bus on an
absolute deadline grid, timestamps and sequence-numbers samples, and streams
batches to the master concurrently with acquisition.

The polling producer and the network consumer are coupled only through the
bounded AcquisitionBuffer: overflow (drop-oldest, with gap records) is the
sole loss mechanism on the slave, and polling never waits for the network.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import partial

from .core import AcquisitionConfig, SampleRecord, VibedaqError, validate_config
from .protocol import (
    ACK_ERROR,
    ACK_OK,
    Ack,
    Config,
    DataBatch,
    Heartbeat,
    Hello,
    Message,
    RunEnd,
    Start,
    Stop,
    TimesyncReq,
    TimesyncResp,
    estimate_offset,
)
from .sensorbus import IMU_ADDR, OUTX_L_XL, WHO_AM_I, WHO_AM_I_VALUE, BusError, select_channel
from .transport import LinkDown

BATCH_RECORDS = 64
TIMESYNC_EXCHANGES = 8
HEARTBEAT_INTERVAL_US = 1_000_000
RECONNECT_MIN_US = 500_000
RECONNECT_MAX_US = 8_000_000


class SlaveState(Enum):
    IDLE = "IDLE"
    CONFIGURED = "CONFIGURED"
    ARMED = "ARMED"
    ACQUIRING = "ACQUIRING"
    DRAINING = "DRAINING"


@dataclass(frozen=True)
class Gap:
    mux_channel: int
    seq_start: int
    length: int


@dataclass
class SensorSummary:
    acquired: int = 0
    failed: bool = False


@dataclass
class AcquisitionSummary:
    sensors: dict[int, SensorSummary] = field(default_factory=dict)
    ticks: int = 0
    mean_interval_us: float = 0.0
    max_deadline_error_us: int = 0
    intra_tick_skew_us: int = 0
    dropped_gaps: list[Gap] = field(default_factory=list)

    @property
    def total_acquired(self) -> int:
        return sum(s.acquired for s in self.sensors.values())


class AcquisitionBuffer:
    """Bounded per-sensor sample queue with a drop-oldest overflow policy.

    Every dropped sample extends a gap record covering a contiguous seq range,
    so downstream accounting can explain any deficit exactly.
    """

    def __init__(self, sensors: list[int], capacity_per_sensor: int):
        if capacity_per_sensor < 1:
            raise VibedaqError("buffer capacity must be at least one sample")
        self.capacity = capacity_per_sensor
        self._queues: dict[int, deque[SampleRecord]] = {m: deque() for m in sensors}
        self._lock = threading.Lock()
        self.gaps: list[Gap] = []
        self.high_watermark = 0

    def push(self, mux_channel: int, record: SampleRecord) -> None:
        with self._lock:
            q = self._queues[mux_channel]
            if len(q) >= self.capacity:
                dropped = q.popleft()
                self._record_drop(mux_channel, dropped.seq)
            q.append(record)
            occupancy = sum(len(queue) for queue in self._queues.values())
            self.high_watermark = max(self.high_watermark, occupancy)

    def _record_drop(self, mux_channel: int, seq: int) -> None:
        if self.gaps:
            last = self.gaps[-1]
            if last.mux_channel == mux_channel and last.seq_start + last.length == seq:
                self.gaps[-1] = Gap(mux_channel, last.seq_start, last.length + 1)
                return
        self.gaps.append(Gap(mux_channel, seq, 1))

    def pop_batch(self, mux_channel: int, limit: int = BATCH_RECORDS) -> list[SampleRecord]:
        """Remove and return up to `limit` records with contiguous seq numbers."""
        with self._lock:
            q = self._queues[mux_channel]
            out: list[SampleRecord] = []
            while q and len(out) < limit:
                if out and q[0].seq != out[-1].seq + 1:
                    break
                out.append(q.popleft())
            return out

    def requeue_front(self, mux_channel: int, records: list[SampleRecord]) -> None:
        with self._lock:
            q = self._queues[mux_channel]
            for rec in reversed(records):
                q.appendleft(rec)

    def occupancy(self, mux_channel: int | None = None) -> int:
        with self._lock:
            if mux_channel is not None:
                return len(self._queues[mux_channel])
            return sum(len(q) for q in self._queues.values())

    def is_empty(self) -> bool:
        return self.occupancy() == 0


class SlaveController:
    """Message-driven slave node tied to a scheduler/clock pair.

    State machine: IDLE -> CONFIGURED -> ARMED -> ACQUIRING -> DRAINING -> IDLE,
    with STOP legal from ARMED/ACQUIRING and CONFIG legal from IDLE/CONFIGURED.
    Messages illegal in the current state are ACKed with an error and ignored.
    """

    def __init__(
        self,
        slave_id: int,
        sensors: list[int],
        bus=None,
        clock=None,
        link=None,
        tick_hook=None,
        bus_factory=None,
        buffer_seconds: float = 10.0,
        pump_interval_us: int = 250_000,
        threaded_acquisition: bool = False,
    ):
        self.slave_id = slave_id
        self.sensors = sorted(sensors)
        self.bus = bus
        self.clock = clock
        self.link = link
        self.tick_hook = tick_hook
        self.bus_factory = bus_factory  # rebuilds the bus for the configured rate/range
        self.pump_interval_us = pump_interval_us
        self.threaded_acquisition = threaded_acquisition
        self.buffer_seconds = buffer_seconds

        self.state = SlaveState.IDLE
        self.config: AcquisitionConfig | None = None
        self.offset_us = 0  # master_time ~= local_time + offset_us
        self.buffer: AcquisitionBuffer | None = None
        self.summary: AcquisitionSummary | None = None
        self.samples_acquired = 0

        self._sync_exchanges: list[tuple[int, int, int, int]] = []
        self._sync_pending_t1: int | None = None
        self._link_up = True
        self._backoff_us = RECONNECT_MIN_US
        self._pump_scheduled = False
        self._heartbeat_scheduled = False
        self._run_end_pending = False
        self._generation = 0  # invalidates stale scheduled ticks across runs
        self._acq_thread: threading.Thread | None = None
        self._stop_event = threading.Event()

    # -- wire-in ------------------------------------------------------------

    def hello_message(self) -> Hello:
        return Hello(self.slave_id, tuple(self.sensors))

    def announce(self) -> None:
        self._send(self.hello_message())

    def handle_message(self, msg: Message) -> list[Message]:
        """Apply one inbound message; returns the messages sent in response."""
        sent: list[Message] = []
        if isinstance(msg, TimesyncReq):
            now = self.clock.now_us()
            sent.append(TimesyncResp(msg.t1_us, now, now))
        elif isinstance(msg, TimesyncResp):
            self._on_timesync_resp(msg)
        elif isinstance(msg, Config):
            sent.extend(self._on_config(msg))
        elif isinstance(msg, Start):
            sent.extend(self._on_start(msg))
        elif isinstance(msg, Stop):
            sent.extend(self._on_stop())
        for m in sent:
            self._send(m)
        return sent

    # -- configuration and clock sync ----------------------------------------

    def _on_config(self, msg: Config) -> list[Message]:
        if self.state not in (SlaveState.IDLE, SlaveState.CONFIGURED):
            return [Ack(Config.TYPE, ACK_ERROR)]
        violations = validate_config(msg.config)
        if violations:
            return [Ack(Config.TYPE, ACK_ERROR)]
        if self.bus_factory is not None:
            try:
                self.bus, self.tick_hook = self.bus_factory(msg.config)
            except VibedaqError:
                return [Ack(Config.TYPE, ACK_ERROR)]
        self.config = msg.config
        self.state = SlaveState.CONFIGURED
        self._begin_timesync()
        return [Ack(Config.TYPE, ACK_OK)]

    def _begin_timesync(self) -> None:
        self._sync_exchanges = []
        self._send_sync_request()

    def _send_sync_request(self) -> None:
        self._sync_pending_t1 = self.clock.now_us()
        try:
            self.link.send(TimesyncReq(self._sync_pending_t1))
        except LinkDown:
            self._on_link_down()

    def _on_timesync_resp(self, msg: TimesyncResp) -> None:
        if self._sync_pending_t1 is None or msg.t1_us != self._sync_pending_t1:
            return
        t4 = self.clock.now_us()
        self._sync_exchanges.append((msg.t1_us, msg.t2_us, msg.t3_us, t4))
        self._sync_pending_t1 = None
        if len(self._sync_exchanges) < TIMESYNC_EXCHANGES:
            self._send_sync_request()
        else:
            self.offset_us = estimate_offset(self._sync_exchanges).offset_us

    # -- run lifecycle --------------------------------------------------------

    def _on_start(self, msg: Start) -> list[Message]:
        if self.state is not SlaveState.CONFIGURED or self.config is None:
            return [Ack(Start.TYPE, ACK_ERROR)]
        local_start = msg.scheduled_start_us - self.offset_us
        now = self.clock.now_us()
        if msg.scheduled_start_us == 0 or local_start <= now:
            local_start = now + 1000
        self._arm(local_start)
        return []

    def _arm(self, local_start_us: int) -> None:
        cfg = self.config
        capacity = max(1, round(self.buffer_seconds * cfg.odr_hz))
        self.buffer = AcquisitionBuffer(self.sensors, capacity)
        self.summary = AcquisitionSummary(sensors={m: SensorSummary() for m in self.sensors})
        self.samples_acquired = 0
        self._run_end_pending = False
        self._generation += 1
        self.state = SlaveState.ARMED
        self._local_start_us = local_start_us
        self._total_ticks = cfg.expected_samples()
        self._probe_sensors()
        self._schedule_pump()
        self._schedule_heartbeat()
        if self.threaded_acquisition:
            self._stop_event.clear()
            self._acq_thread = threading.Thread(
                target=self._acquisition_thread, name=f"slave{self.slave_id}-acq", daemon=True
            )
            self._acq_thread.start()
        else:
            gen = self._generation
            self.clock.call_at(local_start_us, partial(self._tick_event, 0, gen))

    def _probe_sensors(self) -> None:
        for mux in self.sensors:
            try:
                select_channel(self.bus, mux)
                if self.bus.read(IMU_ADDR, WHO_AM_I, 1)[0] != WHO_AM_I_VALUE:
                    raise BusError("unexpected WHO_AM_I")
            except BusError:
                self.summary.sensors[mux].failed = True

    def _deadline(self, k: int) -> int:
        return self._local_start_us + round(k * 1_000_000 / self.config.odr_hz)

    def _tick_event(self, k: int, generation: int) -> None:
        if generation != self._generation or self.state not in (SlaveState.ARMED, SlaveState.ACQUIRING):
            return
        self._tick_body(k)
        if k + 1 < self._total_ticks and self.state is SlaveState.ACQUIRING:
            self.clock.call_at(self._deadline(k + 1), partial(self._tick_event, k + 1, generation))
        else:
            self._finish_acquisition()

    def _acquisition_thread(self) -> None:
        generation = self._generation
        k = 0
        while k < self._total_ticks and not self._stop_event.is_set():
            deadline = self._deadline(k)
            delay = (deadline - self.clock.now_us()) / 1e6
            if delay > 0:
                time.sleep(delay)
            if self._stop_event.is_set() or generation != self._generation:
                return
            self._tick_body(k)
            k += 1
        if generation == self._generation and self.state is SlaveState.ACQUIRING:
            self.clock.call_soon(self._finish_acquisition)

    def _tick_body(self, k: int) -> None:
        if self.state is SlaveState.ARMED:
            self.state = SlaveState.ACQUIRING
        if self.tick_hook is not None:
            self.tick_hook()
        t_local = self.clock.now_us()
        deadline_error = abs(t_local - self._deadline(k))
        summary = self.summary
        summary.max_deadline_error_us = max(summary.max_deadline_error_us, deadline_error)
        first_read_us = last_read_us = None
        for mux in self.sensors:
            sensor = summary.sensors[mux]
            if sensor.failed:
                continue
            try:
                select_channel(self.bus, mux)
                burst = self.bus.read(IMU_ADDR, OUTX_L_XL, 6)
            except BusError:
                sensor.failed = True
                continue
            if first_read_us is None:
                first_read_us = self.clock.now_us()
            last_read_us = self.clock.now_us()
            raw = tuple(
                int.from_bytes(burst[i : i + 2], "little", signed=True) for i in (0, 2, 4)
            )
            self.buffer.push(mux, SampleRecord(seq=k, t_local_us=t_local, raw=raw))
            sensor.acquired += 1
            self.samples_acquired += 1
        if first_read_us is not None:
            skew = last_read_us - first_read_us
            summary.intra_tick_skew_us = max(summary.intra_tick_skew_us, skew)
        summary.ticks = k + 1

    def _finish_acquisition(self) -> None:
        if self.state not in (SlaveState.ARMED, SlaveState.ACQUIRING):
            return
        self.state = SlaveState.DRAINING
        self._run_end_pending = True
        if self.summary.ticks > 1:
            span = self._deadline(self.summary.ticks - 1) - self._deadline(0)
            self.summary.mean_interval_us = span / (self.summary.ticks - 1)
        self.summary.dropped_gaps = list(self.buffer.gaps)
        self.clock.call_soon(self._pump)

    def _on_stop(self) -> list[Message]:
        if self.state not in (SlaveState.ARMED, SlaveState.ACQUIRING):
            return [Ack(Stop.TYPE, ACK_ERROR)]
        self._stop_event.set()
        self._finish_acquisition()
        return [Ack(Stop.TYPE, ACK_OK)]

    # -- streaming -------------------------------------------------------------

    def _schedule_pump(self) -> None:
        if not self._pump_scheduled:
            self._pump_scheduled = True
            self.clock.call_later(self.pump_interval_us, self._pump_event)

    def _pump_event(self) -> None:
        self._pump_scheduled = False
        self._pump()
        if self.state is not SlaveState.IDLE:
            self._schedule_pump()

    def _pump(self) -> None:
        """Drain buffered batches into the link; overflow is the only loss here."""
        if not self._link_up or self.buffer is None:
            return
        for mux in self.sensors:
            while True:
                batch = self.buffer.pop_batch(mux)
                if not batch:
                    break
                msg = DataBatch(
                    self.slave_id,
                    mux,
                    batch[0].seq,
                    tuple((r.t_local_us, *r.raw) for r in batch),
                )
                try:
                    self.link.send(msg)
                except LinkDown:
                    self.buffer.requeue_front(mux, batch)
                    self._on_link_down()
                    return
        if self._run_end_pending and self.buffer.is_empty():
            try:
                self.link.send(RunEnd(self.slave_id, self.samples_acquired))
            except LinkDown:
                self._on_link_down()
                return
            self._run_end_pending = False
            self.state = SlaveState.IDLE

    def _schedule_heartbeat(self) -> None:
        if not self._heartbeat_scheduled:
            self._heartbeat_scheduled = True
            self.clock.call_later(HEARTBEAT_INTERVAL_US, self._heartbeat_event)

    def _heartbeat_event(self) -> None:
        self._heartbeat_scheduled = False
        if self.state in (SlaveState.ACQUIRING, SlaveState.DRAINING, SlaveState.ARMED):
            if self._link_up:
                try:
                    self.link.send(Heartbeat(self.slave_id, self.samples_acquired))
                except LinkDown:
                    self._on_link_down()
            self._schedule_heartbeat()

    # -- reconnect -------------------------------------------------------------

    def _on_link_down(self) -> None:
        if not self._link_up:
            return
        self._link_up = False
        self._backoff_us = RECONNECT_MIN_US
        self.clock.call_later(self._backoff_us, self._reconnect_attempt)

    def _reconnect_attempt(self) -> None:
        if self._link_up:
            return
        if self.link.reconnect():
            self._link_up = True
            self.clock.call_soon(self._pump)
            return
        self._backoff_us = min(self._backoff_us * 2, RECONNECT_MAX_US)
        self.clock.call_later(self._backoff_us, self._reconnect_attempt)

    def _send(self, msg: Message) -> None:
        try:
            self.link.send(msg)
        except LinkDown:
            self._on_link_down()
