"""All-in-one simulated deployment: a master and N slaves co-scheduled on a
virtual-time kernel, exchanging real protocol frames over in-process links.

Runs execute deterministically (one seed drives excitation, noise, clock
offsets, and fault injection) and far faster than real time: no wall-clock
sleeps exist anywhere on this path.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .core import AcquisitionConfig, TestType, VibedaqError, validate_config
from .master import MasterCoordinator, RunSession, SessionStatus
from .runtime import Clock, SimKernel
from .sensorbus import ModalScenario, build_slave_bus, resolve_scenario
from .slave import SlaveController
from .transport import LossSpec, SimLink

MAX_SLAVE_CLOCK_SKEW_US = 2_000_000


class SimulationError(VibedaqError):
    pass


def default_config(test_type: TestType = TestType.TVT) -> AcquisitionConfig:
    duration = 60 if test_type is TestType.TVT else 1200
    return AcquisitionConfig(
        run_id=0, test_type=test_type, odr_hz=208, range_g=2, duration_s=duration
    )


@dataclass
class SimulationSpec:
    n_slaves: int = 2
    sensors_per_slave: int = 3
    config: AcquisitionConfig = field(default_factory=default_config)
    scenario: str | ModalScenario | None = None  # None -> preset chosen by test type
    loss_probability: float = 0.0
    drop_window_s: tuple[float, float] | None = None  # (start, duration) after t0
    seed: int = 0
    latency_us: int = 1500

    def __post_init__(self):
        if self.n_slaves < 1 or self.sensors_per_slave < 1:
            raise SimulationError("slave and sensor counts must be >= 1")
        if not (0.0 <= self.loss_probability < 1.0):
            raise SimulationError("loss probability must be in [0,1)")
        violations = validate_config(self.config)
        if violations:
            raise SimulationError("invalid config: " + "; ".join(violations))

    def resolve(self) -> ModalScenario:
        if isinstance(self.scenario, ModalScenario):
            return self.scenario
        name = self.scenario or self.config.test_type.value.lower()
        return resolve_scenario(name)


@dataclass
class SimulationResult:
    session: RunSession
    run_dir: str
    frames_dropped: int
    slaves: list[SlaveController]

    @property
    def aborted(self) -> bool:
        return self.session.status is SessionStatus.ABORTED


class SimulatedDeployment:
    """Master plus slaves wired over sim links, ready to run on the kernel."""

    def __init__(self, spec: SimulationSpec, out_dir: str | None):
        self.spec = spec
        self.kernel = SimKernel(start_us=0)
        self.coordinator = MasterCoordinator(self.kernel, Clock(self.kernel, 0), out_dir)
        self.slaves: list[SlaveController] = []
        self.slave_links: list[SimLink] = []

        scenario = spec.resolve()
        root = random.Random(spec.seed)
        sensors = list(range(spec.sensors_per_slave))
        for i in range(spec.n_slaves):
            slave_id = i + 1
            clock_offset = root.randrange(0, MAX_SLAVE_CLOCK_SKEW_US)
            scenario_seed = root.randrange(2**31)
            loss_rng = random.Random(root.randrange(2**31))
            bus, engine = build_slave_bus(
                sensors, scenario, spec.config.odr_hz, spec.config.range_g, seed=scenario_seed
            )
            uplink = SimLink(
                self.kernel,
                lambda msg, sid=slave_id: self.coordinator.handle_message(sid, msg),
                spec.latency_us,
                LossSpec(probability=spec.loss_probability),
                loss_rng,
            )
            holder: dict = {}
            downlink = SimLink(
                self.kernel,
                lambda msg, h=holder: h["slave"].handle_message(msg),
                spec.latency_us,
            )
            slave = SlaveController(
                slave_id=slave_id,
                sensors=sensors,
                bus=bus,
                clock=Clock(self.kernel, clock_offset),
                link=uplink,
                tick_hook=engine.tick,
            )
            holder["slave"] = slave
            self.coordinator.register_slave(slave.hello_message(), downlink)
            self.slaves.append(slave)
            self.slave_links.append(uplink)

    def run(self) -> RunSession:
        spec = self.spec
        run_id = spec.config.run_id or self.coordinator.allocate_run_id()
        config = replace(spec.config, run_id=run_id)
        self.coordinator.extra_metadata = {
            "seed": spec.seed,
            "loss_probability": spec.loss_probability,
            "drop_window_s": list(spec.drop_window_s) if spec.drop_window_s else None,
            "n_slaves": spec.n_slaves,
            "sensors_per_slave": spec.sensors_per_slave,
        }
        session = self.coordinator.start_run(config)

        if not self.kernel.run_until(lambda: session.status is not SessionStatus.PENDING,
                                     max_time_us=30_000_000):
            raise SimulationError("run never left PENDING")
        if session.status is SessionStatus.ABORTED:
            return session

        if spec.drop_window_s is not None:
            w_start, w_len = spec.drop_window_s
            t0 = session.scheduled_start_us
            window = (t0 + round(w_start * 1e6), t0 + round((w_start + w_len) * 1e6))
            for link in self.slave_links:
                link.loss.down_windows = (window,)

        done = self.kernel.run_until(
            lambda: session.status in (SessionStatus.COMPLETE, SessionStatus.ABORTED)
        )
        if not done:
            raise SimulationError(f"simulation stalled in {session.status}")
        self.kernel.run_until_idle(max_time_us=self.kernel.now_us() + 20_000_000)
        return session


def simulate(spec: SimulationSpec, out_dir: str | None) -> SimulationResult:
    """Execute one simulated run end to end; artifacts land in out_dir."""
    deployment = SimulatedDeployment(spec, out_dir)
    session = deployment.run()
    return SimulationResult(
        session=session,
        run_dir=session.artifact_dir,
        frames_dropped=sum(link.frames_dropped for link in deployment.slave_links),
        slaves=deployment.slaves,
    )
