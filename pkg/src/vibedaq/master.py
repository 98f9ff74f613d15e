"""Master node: run lifecycle control, config broadcast, per-slave clock
bookkeeping, aggregation of all slave streams, integrity accounting, and CSV
persistence. One run is active at a time; CSV files are the data store."""

from __future__ import annotations

import json
import os
import threading
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum

from .core import (
    DEFAULT_SENSOR_POSITIONS,
    AcquisitionConfig,
    VibedaqError,
    raw_to_g,
    sensor_label,
    validate_config,
)
from .protocol import (
    ACK_OK,
    Ack,
    ClockOffset,
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
from .transport import LinkDown

TIMESYNC_EXCHANGES = 8
ACK_TIMEOUT_US = 5_000_000
START_DELAY_US = 2_000_000
LIVE_TAIL_SAMPLES = 1024


class MasterError(VibedaqError):
    pass


class SessionStatus(Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    DRAINING = "DRAINING"
    COMPLETE = "COMPLETE"
    ABORTED = "ABORTED"


@dataclass
class SensorStream:
    """Aggregated samples of one sensor with master-epoch timestamps."""

    slave_id: int
    mux_channel: int
    seqs: list[int] = field(default_factory=list)
    t_us: list[int] = field(default_factory=list)
    values_g: list[tuple[float, float, float]] = field(default_factory=list)
    next_seq: int = 0
    gaps: list[tuple[int, int]] = field(default_factory=list)  # (seq_start, length)
    saturation: dict[str, int] = field(default_factory=lambda: {"x": 0, "y": 0, "z": 0})

    @property
    def label(self) -> str:
        return sensor_label(self.slave_id, self.mux_channel)

    def gap_total(self) -> int:
        return sum(length for _, length in self.gaps)


@dataclass
class ChannelIntegrity:
    expected: int
    received: int
    gap_count: int
    gap_total: int
    longest_gap: int
    rate_hz: float
    saturation: int
    flag: str = ""


@dataclass
class IntegrityReport:
    channels: dict[str, ChannelIntegrity]

    def total_deficit(self) -> int:
        return sum(c.expected - c.received for c in self.channels.values())


@dataclass
class SlaveHandle:
    slave_id: int
    link: object
    sensors: tuple[int, ...]
    connected: bool = True
    state_hint: str = "IDLE"
    samples_reported: int = 0
    last_heartbeat_us: int = 0


@dataclass
class RunSession:
    run_id: int
    config: AcquisitionConfig
    slave_ids: list[int]
    status: SessionStatus = SessionStatus.PENDING
    offsets: dict[int, ClockOffset] = field(default_factory=dict)
    streams: dict[tuple[int, int], SensorStream] = field(default_factory=dict)
    scheduled_start_us: int = 0
    ended_us: int = 0
    stopped_early: bool = False
    abort_reason: str = ""
    run_end_totals: dict[int, int] = field(default_factory=dict)
    artifact_dir: str = ""

    def sensor_order(self) -> list[SensorStream]:
        return [self.streams[k] for k in sorted(self.streams)]


class MasterCoordinator:
    """Control node: registers slaves, choreographs run start (timesync ->
    config -> atomic start), ingests batches, and finalizes artifacts.

    All entry points are serialized by one lock; API servers read state
    through snapshot methods only.
    """

    def __init__(self, scheduler, clock, out_dir: str | None = None):
        self.scheduler = scheduler
        self.clock = clock
        self.out_dir = out_dir
        self.start_delay_us = START_DELAY_US
        self.slaves: dict[int, SlaveHandle] = {}
        self.session: RunSession | None = None
        self.history: dict[int, RunSession] = {}
        self.extra_metadata: dict = {}
        self.on_session_end = []  # callbacks (session) -> None
        self._next_run_id = 1
        self._lock = threading.RLock()
        self._sync_state: dict[int, list] = {}
        self._sync_pending: dict[int, int] = {}
        self._acked: set[int] = set()
        self._run_ended: set[int] = set()
        self._live_tails: dict[tuple[int, int], deque] = {}

    # -- registration ---------------------------------------------------------

    def register_slave(self, hello: Hello, link) -> None:
        with self._lock:
            handle = self.slaves.get(hello.slave_id)
            if handle is None:
                self.slaves[hello.slave_id] = SlaveHandle(hello.slave_id, link, hello.sensors)
            else:
                handle.link = link
                handle.sensors = hello.sensors
                handle.connected = True

    def mark_disconnected(self, slave_id: int) -> None:
        with self._lock:
            if slave_id in self.slaves:
                self.slaves[slave_id].connected = False

    # -- inbound messages -------------------------------------------------------

    def handle_message(self, slave_id: int, msg: Message) -> None:
        with self._lock:
            if isinstance(msg, Hello):
                return  # registration is transport-level (needs the link)
            if isinstance(msg, TimesyncReq):
                now = self.clock.now_us()
                self._send(slave_id, TimesyncResp(msg.t1_us, now, now))
            elif isinstance(msg, TimesyncResp):
                self._on_timesync_resp(slave_id, msg)
            elif isinstance(msg, Ack):
                self._on_ack(slave_id, msg)
            elif isinstance(msg, DataBatch):
                self.ingest_batch(msg)
            elif isinstance(msg, Heartbeat):
                self._on_heartbeat(slave_id, msg)
            elif isinstance(msg, RunEnd):
                self._on_run_end(slave_id, msg)

    # -- run lifecycle ----------------------------------------------------------

    def allocate_run_id(self) -> int:
        with self._lock:
            run_id = self._next_run_id
            self._next_run_id += 1
            return run_id

    def start_run(self, config: AcquisitionConfig) -> RunSession:
        with self._lock:
            if self.session is not None and self.session.status in (
                SessionStatus.PENDING,
                SessionStatus.RUNNING,
                SessionStatus.DRAINING,
            ):
                raise MasterError(f"run {self.session.run_id} is still active")
            violations = validate_config(config)
            if violations:
                raise MasterError("invalid config: " + "; ".join(violations))
            connected = [s for s in self.slaves.values() if s.connected]
            if not connected:
                raise MasterError("no slaves connected")

            session = RunSession(
                run_id=config.run_id,
                config=config,
                slave_ids=sorted(s.slave_id for s in connected),
            )
            for handle in connected:
                for mux in handle.sensors:
                    key = (handle.slave_id, mux)
                    session.streams[key] = SensorStream(handle.slave_id, mux)
                    self._live_tails[key] = deque(maxlen=LIVE_TAIL_SAMPLES)
            self.session = session
            self.history[session.run_id] = session
            self._acked = set()
            self._run_ended = set()
            self._sync_state = {sid: [] for sid in session.slave_ids}
            self._sync_pending = {}
            for sid in session.slave_ids:
                self._send_sync_request(sid)
            return session

    def request_stop(self) -> None:
        with self._lock:
            session = self.session
            if session is None or session.status is not SessionStatus.RUNNING:
                raise MasterError("no running session to stop")
            session.stopped_early = True
            session.status = SessionStatus.DRAINING
            for sid in session.slave_ids:
                self._send(sid, Stop())

    def _send_sync_request(self, slave_id: int) -> None:
        t1 = self.clock.now_us()
        self._sync_pending[slave_id] = t1
        self._send(slave_id, TimesyncReq(t1))

    def _on_timesync_resp(self, slave_id: int, msg: TimesyncResp) -> None:
        session = self.session
        if session is None or session.status is not SessionStatus.PENDING:
            return
        if self._sync_pending.get(slave_id) != msg.t1_us:
            return
        del self._sync_pending[slave_id]
        exchanges = self._sync_state[slave_id]
        exchanges.append((msg.t1_us, msg.t2_us, msg.t3_us, self.clock.now_us()))
        if len(exchanges) < TIMESYNC_EXCHANGES:
            self._send_sync_request(slave_id)
            return
        est = estimate_offset(exchanges)
        # estimate is slave-minus-master; store master ~= slave + offset
        session.offsets[slave_id] = ClockOffset(-est.offset_us, est.rtt_us)
        if all(sid in session.offsets for sid in session.slave_ids):
            self._broadcast_config()

    def _broadcast_config(self) -> None:
        session = self.session
        for sid in session.slave_ids:
            self._send(sid, Config(session.config))
        run_id = session.run_id
        self.scheduler.call_at(
            self.scheduler.now_us() + ACK_TIMEOUT_US, lambda: self._ack_timeout(run_id)
        )

    def _on_ack(self, slave_id: int, msg: Ack) -> None:
        session = self.session
        if session is None or msg.acked_type != Config.TYPE:
            return
        if session.status is not SessionStatus.PENDING:
            return
        if msg.status != ACK_OK:
            self._abort(f"slave {slave_id} rejected configuration")
            return
        self._acked.add(slave_id)
        if self._acked >= set(session.slave_ids):
            start_us = self.clock.now_us() + self.start_delay_us
            session.scheduled_start_us = start_us
            # atomic start: every ACKed slave gets START, or the run aborts
            for sid in session.slave_ids:
                self._send(sid, Start(start_us))
            session.status = SessionStatus.RUNNING

    def _ack_timeout(self, run_id: int) -> None:
        with self._lock:
            session = self.session
            if session is None or session.run_id != run_id:
                return
            if session.status is SessionStatus.PENDING:
                missing = sorted(set(session.slave_ids) - self._acked)
                self._abort(f"config not acknowledged by slaves {missing} within 5 s")

    def _abort(self, reason: str) -> None:
        session = self.session
        session.status = SessionStatus.ABORTED
        session.abort_reason = reason
        session.ended_us = self.clock.now_us()
        self._finalize_artifacts(session)
        for cb in self.on_session_end:
            cb(session)

    # -- data path ---------------------------------------------------------------

    def ingest_batch(self, batch: DataBatch) -> None:
        session = self.session
        if session is None or session.status not in (SessionStatus.RUNNING, SessionStatus.DRAINING):
            return  # stray batch outside an active run; drop with no side effects
        stream = session.streams.get((batch.slave_id, batch.mux_channel))
        offset = session.offsets.get(batch.slave_id)
        if stream is None or offset is None:
            return
        range_g = session.config.range_g
        tail = self._live_tails.get((batch.slave_id, batch.mux_channel))
        if batch.seq_first > stream.next_seq:
            stream.gaps.append((stream.next_seq, batch.seq_first - stream.next_seq))
        seq = batch.seq_first
        for t_local, x, y, z in batch.records:
            if seq < stream.next_seq:  # duplicate after a reconnect replay
                seq += 1
                continue
            t_master = t_local + offset.offset_us
            g = (raw_to_g(x, range_g), raw_to_g(y, range_g), raw_to_g(z, range_g))
            stream.seqs.append(seq)
            stream.t_us.append(t_master)
            stream.values_g.append(g)
            for axis, raw in zip(("x", "y", "z"), (x, y, z)):
                if raw in (-32768, 32767):
                    stream.saturation[axis] += 1
            if tail is not None:
                tail.append((t_master, *g))
            seq += 1
        stream.next_seq = max(stream.next_seq, batch.seq_first + len(batch.records))

    def _on_heartbeat(self, slave_id: int, msg: Heartbeat) -> None:
        handle = self.slaves.get(slave_id)
        if handle is not None:
            handle.samples_reported = msg.samples_acquired
            handle.last_heartbeat_us = self.clock.now_us()

    def _on_run_end(self, slave_id: int, msg: RunEnd) -> None:
        session = self.session
        if session is None or session.status not in (SessionStatus.RUNNING, SessionStatus.DRAINING):
            return
        session.run_end_totals[slave_id] = msg.total_samples
        self._run_ended.add(slave_id)
        if self._run_ended >= set(session.slave_ids):
            self._complete()

    def _complete(self) -> None:
        session = self.session
        if not session.stopped_early:
            expected = session.config.expected_samples()
            for stream in session.streams.values():
                if stream.next_seq < expected:
                    stream.gaps.append((stream.next_seq, expected - stream.next_seq))
                    stream.next_seq = expected
        session.status = SessionStatus.COMPLETE
        session.ended_us = self.clock.now_us()
        self._finalize_artifacts(session)
        for cb in self.on_session_end:
            cb(session)

    def _finalize_artifacts(self, session: RunSession) -> None:
        if not self.out_dir:
            return
        run_dir = os.path.join(self.out_dir, f"run_{session.run_id:06d}")
        os.makedirs(run_dir, exist_ok=True)
        session.artifact_dir = run_dir
        write_run_csv(os.path.join(run_dir, "data.csv"), session)
        report = self.integrity_report(session)
        write_integrity_csv(os.path.join(run_dir, "integrity.csv"), report)
        with open(os.path.join(run_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(self.session_summary(session), fh, indent=2, sort_keys=True)
            fh.write("\n")

    # -- reporting ----------------------------------------------------------------

    def integrity_report(self, session: RunSession | None = None) -> IntegrityReport:
        with self._lock:
            session = session or self.session
            if session is None:
                raise MasterError("no session")
            channels: dict[str, ChannelIntegrity] = {}
            final_full_run = (
                session.status is SessionStatus.COMPLETE and not session.stopped_early
            )
            for stream in session.sensor_order():
                received = len(stream.seqs)
                if final_full_run:
                    expected = session.config.expected_samples()
                else:
                    expected = received + stream.gap_total()
                gap_count = len(stream.gaps)
                longest = max((length for _, length in stream.gaps), default=0)
                if received >= 2 and stream.t_us[-1] > stream.t_us[0]:
                    rate = (received - 1) / ((stream.t_us[-1] - stream.t_us[0]) / 1e6)
                    flag = ""
                else:
                    rate = 0.0
                    flag = "insufficient"
                for axis in ("x", "y", "z"):
                    label = f"{stream.label}_{axis}"
                    channels[label] = ChannelIntegrity(
                        expected=expected,
                        received=received,
                        gap_count=gap_count,
                        gap_total=stream.gap_total(),
                        longest_gap=longest,
                        rate_hz=rate,
                        saturation=stream.saturation[axis],
                        flag=flag,
                    )
            return IntegrityReport(channels=channels)

    def session_summary(self, session: RunSession) -> dict:
        positions = {
            (p.slave_id, p.mux_channel): p for p in DEFAULT_SENSOR_POSITIONS
        }
        sensors = []
        for stream in session.sensor_order():
            pos = positions.get((stream.slave_id, stream.mux_channel))
            sensors.append(
                {
                    "sensor": stream.label,
                    "slave_id": stream.slave_id,
                    "mux_channel": stream.mux_channel,
                    "received": len(stream.seqs),
                    "gap_total": stream.gap_total(),
                    "position_cm": [pos.x_cm, pos.y_cm] if pos else None,
                }
            )
        cfg = session.config
        summary = {
            "format": "vibedaq-summary v1",
            "run_id": session.run_id,
            "status": session.status.value,
            "abort_reason": session.abort_reason,
            "config": {
                "test_type": cfg.test_type.value,
                "odr_hz": cfg.odr_hz,
                "range_g": cfg.range_g,
                "duration_s": cfg.duration_s,
            },
            "scheduled_start_us": session.scheduled_start_us,
            "ended_us": session.ended_us,
            "stopped_early": session.stopped_early,
            "slaves": {
                str(sid): {
                    "offset_us": session.offsets[sid].offset_us,
                    "rtt_us": session.offsets[sid].rtt_us,
                    "run_end_total": session.run_end_totals.get(sid),
                }
                for sid in session.slave_ids
                if sid in session.offsets
            },
            "sensors": sensors,
        }
        summary.update(self.extra_metadata)
        return summary

    def status_snapshot(self) -> dict:
        with self._lock:
            session = self.session
            return {
                "state": session.status.value if session else "IDLE",
                "active_run": session.run_id
                if session and session.status in (SessionStatus.PENDING, SessionStatus.RUNNING, SessionStatus.DRAINING)
                else None,
                "slaves": {
                    str(s.slave_id): {
                        "connected": s.connected,
                        "sensors": list(s.sensors),
                        "samples_reported": s.samples_reported,
                    }
                    for s in self.slaves.values()
                },
            }

    def live_snapshot(self, since_us: int, max_points: int = 32) -> dict:
        """Decimated recent samples plus per-sensor health for the live feed."""
        with self._lock:
            session = self.session
            now = self.clock.now_us()
            frame = {"t_us": now, "channels": {}, "health": {}}
            if session is None:
                return frame
            nominal = session.config.odr_hz
            for key, stream in sorted(session.streams.items()):
                tail = self._live_tails.get(key)
                if tail is None:
                    continue
                recent = [s for s in tail if s[0] > since_us]
                stride = max(1, -(-len(recent) // max_points))
                decimated = recent[::stride][:max_points]
                for idx, axis in enumerate(("x", "y", "z"), start=1):
                    frame["channels"][f"{stream.label}_{axis}"] = [
                        round(s[idx], 6) for s in decimated
                    ]
                window = [s[0] for s in tail if s[0] > now - 2_000_000]
                if len(window) >= 2 and window[-1] > window[0]:
                    rate = (len(window) - 1) / ((window[-1] - window[0]) / 1e6)
                else:
                    rate = 0.0
                frame["health"][stream.label] = {
                    "rate_hz": round(rate, 3),
                    "gaps": len(stream.gaps),
                    "nominal_hz": nominal,
                }
            return frame

    # -- plumbing -----------------------------------------------------------------

    def _send(self, slave_id: int, msg: Message) -> None:
        handle = self.slaves.get(slave_id)
        if handle is None:
            return
        try:
            handle.link.send(msg)
        except LinkDown:
            handle.connected = False


# --- artifacts -----------------------------------------------------------------


def format_epoch_utc(t_us: int) -> str:
    base = datetime(1970, 1, 1, tzinfo=timezone.utc) + timedelta(microseconds=int(t_us))
    return base.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"


def write_run_csv(path: str, session: RunSession) -> None:
    """Write the run dataset with the fixed wide schema.

    Line 1 is the format tag, line 2 run metadata, line 3 the column row;
    data rows follow, one per seq, with empty fields for missing samples.
    Identical sessions produce byte-identical files.
    """
    streams = session.sensor_order()
    cfg = session.config
    header_cols = ["seq"]
    for stream in streams:
        label = stream.label
        header_cols += [f"t_{label}_us", f"{label}_x_g", f"{label}_y_g", f"{label}_z_g"]

    by_seq = []
    for stream in streams:
        by_seq.append({seq: i for i, seq in enumerate(stream.seqs)})
    max_seq = max((s.seqs[-1] for s in streams if s.seqs), default=-1)

    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# vibedaq-run v1\n")
            fh.write(
                "# run_id=%d,test_type=%s,fs_hz=%g,range_g=%g,start_utc=%s\n"
                % (
                    session.run_id,
                    cfg.test_type.value,
                    cfg.odr_hz,
                    cfg.range_g,
                    format_epoch_utc(session.scheduled_start_us),
                )
            )
            fh.write(",".join(header_cols) + "\n")
            for seq in range(max_seq + 1):
                fields = [str(seq)]
                for stream, index in zip(streams, by_seq):
                    i = index.get(seq)
                    if i is None:
                        fields += ["", "", "", ""]
                    else:
                        gx, gy, gz = stream.values_g[i]
                        fields += [
                            str(stream.t_us[i]),
                            "%.6g" % gx,
                            "%.6g" % gy,
                            "%.6g" % gz,
                        ]
                fh.write(",".join(fields) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_integrity_csv(path: str, report: IntegrityReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            "channel,expected,received,gap_count,gap_total,longest_gap,rate_hz,saturation,flag\n"
        )
        for label, c in report.channels.items():
            fh.write(
                "%s,%d,%d,%d,%d,%d,%.6g,%d,%s\n"
                % (
                    label, c.expected, c.received, c.gap_count, c.gap_total,
                    c.longest_gap, c.rate_hz, c.saturation, c.flag,
                )
            )
