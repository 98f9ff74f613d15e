"""End-to-end deployment over real localhost TCP sockets."""

import os
import time

import pytest

from vibedaq.core import AcquisitionConfig, TestType
from vibedaq.master import SessionStatus
from vibedaq.net import MasterRuntime, TcpSlaveNode


def wait_for(predicate, timeout=20.0, what="condition"):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return
        time.sleep(0.05)
    raise AssertionError(f"timed out waiting for {what}")


@pytest.fixture()
def deployment(tmp_path):
    runtime = MasterRuntime(str(tmp_path), start_delay_us=300_000)
    host, port = runtime.serve_tcp("127.0.0.1", 0)
    nodes = [
        TcpSlaveNode(sid, (host, port), [0, 1, 2], scenario="tvt", seed=sid)
        for sid in (1, 2)
    ]
    for node in nodes:
        assert node.connect(deadline_s=10)
    wait_for(
        lambda: len(runtime.coordinator.slaves) == 2, what="both slaves to register"
    )
    yield runtime, nodes, tmp_path
    for node in nodes:
        node.stop()
    runtime.stop()


class TestTcpDeployment:
    def test_full_run_over_sockets(self, deployment):
        runtime, nodes, tmp_path = deployment
        cfg = AcquisitionConfig(
            run_id=runtime.coordinator.allocate_run_id(),
            test_type=TestType.TVT,
            odr_hz=104,
            range_g=2,
            duration_s=2,
        )
        session = runtime.coordinator.start_run(cfg)
        wait_for(
            lambda: session.status is SessionStatus.COMPLETE,
            timeout=30,
            what="run to complete over TCP",
        )
        report = runtime.coordinator.integrity_report(session)
        assert len(report.channels) == 18
        for channel in report.channels.values():
            assert channel.received == channel.expected == 208
            assert channel.gap_count == 0
            assert channel.rate_hz == pytest.approx(104, rel=0.01)
        csv_path = os.path.join(session.artifact_dir, "data.csv")
        with open(csv_path) as fh:
            lines = fh.read().splitlines()
        assert len(lines) == 3 + 208
        assert len(lines[2].split(",")) == 25

    def test_master_offsets_estimated_per_slave(self, deployment):
        runtime, nodes, tmp_path = deployment
        cfg = AcquisitionConfig(
            run_id=runtime.coordinator.allocate_run_id(),
            test_type=TestType.TVT,
            odr_hz=104,
            range_g=2,
            duration_s=1,
        )
        session = runtime.coordinator.start_run(cfg)
        wait_for(
            lambda: session.status is SessionStatus.COMPLETE, timeout=20, what="completion"
        )
        assert set(session.offsets) == {1, 2}
        for off in session.offsets.values():
            # same host, so estimated skew is tiny and rtt sane
            assert abs(off.offset_us) < 200_000
            assert 0 <= off.rtt_us < 1_000_000


class TestUnreachableMaster:
    def test_connect_gives_up(self):
        node = TcpSlaveNode(1, ("127.0.0.1", 1), [0], scenario="tvt")
        try:
            assert node.connect(deadline_s=2.5) is False
        finally:
            node.stop()
