"""Command-line entry points: run nodes, simulate a deployment end to end,
analyze recorded runs, and compare test types.

Exit codes: 0 success, 2 usage error (argparse), 3 runtime abort.
"""

from __future__ import annotations

import argparse
import sys

from .core import AcquisitionConfig, TestType, VibedaqError
from .spectra import WelchParams

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ABORT = 3


def _parse_window(text: str) -> tuple[float, float]:
    try:
        start, duration = (float(p) for p in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected START:DURATION seconds") from None
    if start < 0 or duration <= 0:
        raise argparse.ArgumentTypeError("window start must be >= 0 and duration > 0")
    return start, duration


def _parse_band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(p) for p in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO:HI in Hz") from None
    if hi <= lo:
        raise argparse.ArgumentTypeError("band upper edge must exceed lower edge")
    return lo, hi


def _parse_sensors(text: str) -> list[int]:
    try:
        sensors = sorted({int(p) for p in text.split(",") if p.strip() != ""})
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated mux channels") from None
    if not sensors or any(not 0 <= s <= 7 for s in sensors):
        raise argparse.ArgumentTypeError("mux channels must be in [0,7]")
    return sensors


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError("expected HOST:PORT")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vibedaq", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="chatty progress output")
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a full master+slaves deployment in-process")
    sim.add_argument("--slaves", type=int, default=2)
    sim.add_argument("--sensors", type=int, default=3, help="sensors per slave")
    sim.add_argument("--rate", type=float, default=208, help="sampling rate in Hz")
    sim.add_argument("--range", type=int, default=2, dest="range_g", help="full scale in g")
    sim.add_argument("--duration", type=int, default=60, help="test duration in seconds")
    sim.add_argument("--test-type", choices=["TVT", "AVT"], default="TVT")
    sim.add_argument("--scenario", default=None, help="preset name (tvt/avt) or scenario file")
    sim.add_argument("--loss-prob", type=float, default=0.0, help="per-frame data loss probability")
    sim.add_argument("--drop-window", type=_parse_window, default=None, metavar="START:DUR",
                     help="connection outage window, seconds after acquisition start")
    sim.add_argument("--run-id", type=int, default=0, help="force a run id (default: assigned)")
    sim.add_argument("--out-dir", required=True)

    ana = sub.add_parser("analyze", help="spectral analysis of one or more run CSVs")
    ana.add_argument("csvs", nargs="+", metavar="RUN_CSV")
    ana.add_argument("--out-dir", required=True)
    ana.add_argument("--nperseg", type=int, default=2048)
    ana.add_argument("--overlap", type=float, default=0.5)
    ana.add_argument("--peaks", type=int, default=5, help="number of dominant peaks to report")
    ana.add_argument("--min-prominence", type=float, default=5.0,
                     help="prominence floor as a multiple of the median bin value")

    cmp_ = sub.add_parser("compare", help="peak-normalized TVT vs AVT comparison")
    cmp_.add_argument("--tvt", required=True, help="analysis directory of the TVT ensemble")
    cmp_.add_argument("--avt", required=True, help="analysis directory of the AVT ensemble")
    cmp_.add_argument("--band", type=_parse_band, default=(0.0, 10.0), metavar="LO:HI")
    cmp_.add_argument("--out-dir", required=True)

    mst = sub.add_parser("master", help="run the master daemon with its control API")
    mst.add_argument("--listen", type=_parse_endpoint, default=("127.0.0.1", 4710),
                     metavar="HOST:PORT", help="slave connection endpoint")
    mst.add_argument("--api", type=_parse_endpoint, default=("127.0.0.1", 8470),
                     metavar="HOST:PORT", help="HTTP/WS control endpoint")
    mst.add_argument("--out-dir", required=True)
    mst.add_argument("--sim-slaves", type=int, default=0,
                     help="attach N simulated slaves in-process (real-time paced)")
    mst.add_argument("--sim-sensors", type=int, default=3)
    mst.add_argument("--scenario", default=None, help="scenario for simulated slaves")
    mst.add_argument("--static-dir", default=None, help="serve a dashboard build from this path")

    slv = sub.add_parser("slave", help="run a slave daemon against a master")
    slv.add_argument("--id", type=int, required=True, dest="slave_id")
    slv.add_argument("--master", type=_parse_endpoint, required=True, metavar="HOST:PORT")
    slv.add_argument("--sensors", type=_parse_sensors, default=[0, 1, 2],
                     help="comma-separated mux channels")
    slv.add_argument("--scenario", default=None, help="preset name or scenario file")
    return parser


def cmd_simulate(args) -> int:
    from .sim import SimulationSpec, simulate

    config = AcquisitionConfig(
        run_id=args.run_id,
        test_type=TestType[args.test_type],
        odr_hz=args.rate,
        range_g=args.range_g,
        duration_s=args.duration,
        scheduled_start_us=0,
    )
    spec = SimulationSpec(
        n_slaves=args.slaves,
        sensors_per_slave=args.sensors,
        config=config,
        scenario=args.scenario,
        loss_probability=args.loss_prob,
        drop_window_s=args.drop_window,
        seed=args.seed,
    )
    result = simulate(spec, args.out_dir)
    if result.aborted:
        print(f"run aborted: {result.session.abort_reason}", file=sys.stderr)
        return EXIT_ABORT
    if args.verbose:
        from .master import MasterCoordinator
        from .runtime import Clock, SimKernel

        kernel = SimKernel()
        report = MasterCoordinator(kernel, Clock(kernel, 0)).integrity_report(result.session)
        deficit = report.total_deficit()
        print(f"frames dropped in transit: {result.frames_dropped}; sample deficit: {deficit}")
    print(result.run_dir)
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .analysis import AnalysisParams, analyze_runs

    params = AnalysisParams(
        welch=WelchParams(nperseg=args.nperseg, overlap_fraction=args.overlap),
        peaks_k=args.peaks,
        min_prominence_ratio=args.min_prominence,
    )
    result = analyze_runs(args.csvs, params, args.out_dir)
    if args.verbose:
        print(f"{result.n_runs} runs analyzed; peaks at "
              + ", ".join("%.3f Hz" % p.f_hz for p in result.peaks))
    print(result.out_dir)
    return EXIT_OK


def cmd_compare(args) -> int:
    from .analysis import compare_analyses

    result = compare_analyses(args.tvt, args.avt, args.out_dir, band=args.band)
    if args.verbose:
        print("first-two-peak deltas: "
              + ", ".join("%.4g Hz" % d for d in result.peak_deltas_hz)
              + f" (bin width {result.bin_width_hz:.4g} Hz)")
    print(result.out_path)
    return EXIT_OK


def cmd_master(args) -> int:
    from .net import run_master_daemon

    return run_master_daemon(
        listen=args.listen,
        api=args.api,
        out_dir=args.out_dir,
        sim_slaves=args.sim_slaves,
        sim_sensors=args.sim_sensors,
        scenario=args.scenario,
        seed=args.seed,
        static_dir=args.static_dir,
        verbose=args.verbose,
    )


def cmd_slave(args) -> int:
    from .net import run_slave_daemon

    return run_slave_daemon(
        slave_id=args.slave_id,
        master=args.master,
        sensors=args.sensors,
        scenario=args.scenario,
        seed=args.seed,
        verbose=args.verbose,
    )


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "compare": cmd_compare,
    "master": cmd_master,
    "slave": cmd_slave,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except VibedaqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except KeyboardInterrupt:
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
