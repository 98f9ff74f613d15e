"""In-process transports carrying encoded frames between nodes.

Frames are encoded/decoded through the real codec on every hop so simulation
runs exercise the same byte path as live TCP deployments. The lossy link adds
per-frame data loss and scheduled outage windows for fault-injection runs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .core import VibedaqError
from .protocol import DataBatch, Heartbeat, Message, StreamDecoder, encode_frame

LOSSY_TYPES = (DataBatch, Heartbeat)  # fault injection touches the data path only


class LinkDown(VibedaqError):
    """The peer is unreachable; retained data should be retried after reconnect."""


@dataclass
class LossSpec:
    probability: float = 0.0
    down_windows: tuple[tuple[int, int], ...] = ()  # [start_us, end_us) outages

    def is_down(self, t_us: int) -> bool:
        return any(start <= t_us < end for start, end in self.down_windows)


class SimLink:
    """One direction of an in-process connection on a scheduler."""

    def __init__(self, scheduler, deliver, latency_us: int = 1500,
                 loss: LossSpec | None = None, rng: random.Random | None = None):
        self._scheduler = scheduler
        self._deliver = deliver  # callable(Message) on the receiving node
        self._latency = latency_us
        self.loss = loss or LossSpec()
        self._rng = rng or random.Random(0)
        self._decoder = StreamDecoder()
        self.frames_sent = 0
        self.frames_dropped = 0

    def up(self) -> bool:
        return not self.loss.is_down(self._scheduler.now_us())

    def reconnect(self) -> bool:
        return self.up()

    def send(self, msg: Message) -> None:
        if not self.up():
            raise LinkDown("link outage window")
        if isinstance(msg, LOSSY_TYPES) and self.loss.probability > 0.0:
            if self._rng.random() < self.loss.probability:
                self.frames_dropped += 1
                return
        data = encode_frame(msg)
        self.frames_sent += 1
        self._scheduler.call_at(self._scheduler.now_us() + self._latency, lambda: self._arrive(data))

    def _arrive(self, data: bytes) -> None:
        for msg in self._decoder.feed(data):
            self._deliver(msg)


def connect_pair(scheduler, a_handler, b_handler, latency_us: int = 1500,
                 a_to_b_loss: LossSpec | None = None, rng: random.Random | None = None):
    """Wire two nodes together; returns (link used by a, link used by b).

    Loss/outage injection applies to the a->b direction (the slave's data
    path when a is the slave).
    """
    a_link = SimLink(scheduler, b_handler, latency_us, a_to_b_loss, rng)
    b_link = SimLink(scheduler, a_handler, latency_us)
    return a_link, b_link
