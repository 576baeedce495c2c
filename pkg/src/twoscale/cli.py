"""Command-line front end.

::

    twoscale analyze PARAMS [--plant buck|linear] [--gains KPV,KIV,KPI,KII]
    twoscale simulate SCENARIO [--mode none|exact|approx|auto] [--out FILE.csv]
    twoscale sweep PARAMS --tests GAINS_FILE

Exit status is 0 on success, 1 for model or runtime failures and 2 for
usage or file-format problems.  Every failure prints one line starting
with ``error:`` on standard error.
"""

import argparse
import sys

import numpy as np

from . import config, simkit
from .errors import InvalidScenario, ParseError, TwoScaleError
from .plants import BuckParams, buck_closedloop
from .senscond import error_bound_estimate, select_mode
from .sptheory import eigen_report, spectral_displacement

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

_GAIN_KEYS = ("kp_v", "ki_v", "kp_i", "ki_i")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Formatting


def _sig(value):
    text = f"{value:.6g}"
    return "0" if text == "-0" else text


def format_eigenvalues(eigs, imag_rtol=1e-12):
    """Render a conjugate-closed set as ``a`` / ``a±bj`` strings.

    Entries are sorted by ``|Re|`` and then ``|Im|``; each conjugate pair
    appears once.
    """
    eigs = np.asarray(eigs, dtype=complex)
    items = []
    for lam in eigs:
        if abs(lam.imag) <= imag_rtol * max(1.0, abs(lam)):
            items.append((abs(lam.real), 0.0, _sig(lam.real)))
        elif lam.imag > 0.0:
            items.append((abs(lam.real), lam.imag, f"{_sig(lam.real)}±{_sig(lam.imag)}j"))
    items.sort(key=lambda item: (item[0], item[1]))
    return [text for _, _, text in items]


def _mode_note(n_z, m):
    mode = select_mode(n_z, m)
    shape = "square" if m == n_z else ("wide" if m > n_z else "tall")
    return f"{mode.value} (input matrix is {n_z}x{m}, {shape})"


def _parse_gains(text):
    try:
        gains = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--gains expects four comma-separated numbers, got {text!r}") from None
    if len(gains) != 4:
        raise UsageError(f"--gains expects four numbers (kp-v, ki-v, kp-i, ki-i), got {len(gains)}")
    return gains


def write_csv(traj, stream):
    """Write a trajectory as CSV with 17 significant digits and ``\\n`` line ends."""
    header = ["t", *traj.state_names, *traj.injection_names, "residual_norm", "slow_deriv_norm"]
    data = np.column_stack([
        traj.times, traj.states, traj.injections, traj.residual_norms, traj.slow_deriv_norms,
    ])
    stream.write(",".join(header) + "\n")
    np.savetxt(stream, data, fmt="%.17g", delimiter=",", newline="\n")


# ---------------------------------------------------------------------------
# Commands


def _load_system(path, plant, gains):
    text = config.read_text(path)
    if plant == "buck":
        entries = config.collect(text)
        if gains is not None:
            for key, value in zip(_GAIN_KEYS, gains):
                entries[key] = (None, repr(value))
        params = config.build_dataclass(BuckParams, entries, path)
        return buck_closedloop(params).system
    if gains is not None:
        raise UsageError("--gains only applies to --plant buck")
    return simkit.parse_params(text, "custom-linear", path).system


def cmd_analyze(args, out):
    gains = _parse_gains(args.gains) if args.gains else None
    sys_ = _load_system(args.params, args.plant, gains)
    report = eigen_report(sys_)
    bound = error_bound_estimate(sys_) if sys_.m <= sys_.n_z else 0.0
    lines = [
        f"plant: {args.plant}",
        f"dimensions: n_x={sys_.n_x} n_z={sys_.n_z} m={sys_.m}",
        f"conditioning mode: {_mode_note(sys_.n_z, sys_.m)}",
        "eigenvalues without conditioning:",
        *(f"  {t}" for t in format_eigenvalues(report.full_no_sc)),
        "eigenvalues with conditioning:",
        *(f"  {t}" for t in format_eigenvalues(report.full_with_sc)),
        "reduced slow and fast eigenvalues:",
        *(f"  {t}" for t in format_eigenvalues(report.reduced_union)),
        f"gap ratio: {_sig(report.gap_ratio)}",
        f"spectral displacement: {_sig(spectral_displacement(report.full_with_sc, report.full_no_sc))}",
        f"error bound estimate: {_sig(bound)}",
    ]
    out.write("\n".join(lines) + "\n")
    return EXIT_OK


def _metrics_summary(traj):
    m = simkit.metrics(traj)
    index, key = traj.tracked
    settle = f"{_sig(m.settling_time)} s" if m.settled else "unsettled"
    return (
        f"tracked: {traj.state_names[index]} vs {key}\n"
        f"ise: {m.ise:.9g}\n"
        f"overshoot: {_sig(m.overshoot)} %\n"
        f"settling time (2%): {settle}\n"
    )


def cmd_simulate(args, out):
    scenario = simkit.load_scenario(args.scenario)
    if args.mode is not None:
        scenario = scenario.with_mode(args.mode)
    traj = simkit.integrate(scenario)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv(traj, fh)
        out.write(f"wrote {len(traj)} samples to {args.out}\n")
        out.write(_metrics_summary(traj))
    else:
        write_csv(traj, out)
        sys.stderr.write(_metrics_summary(traj))
    return EXIT_OK


def read_gain_sets(text):
    """Gain sets from ``label = kp-v, ki-v, kp-i, ki-i`` lines (the label is optional)."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        label, _, values = line.rpartition("=")
        label = label.strip() or f"set-{len(rows) + 1}"
        numbers = [config.parse_float(v, lineno, "gain") for v in values.split(",")]
        if len(numbers) != 4:
            raise ParseError(f"expected 4 gains, got {len(numbers)}", lineno)
        rows.append((label, tuple(numbers)))
    if not rows:
        raise ParseError("no gain sets found")
    return rows


def cmd_sweep(args, out):
    entries = config.collect(config.read_text(args.params))
    for key in _GAIN_KEYS:
        entries.setdefault(key, (None, "0"))
    base = config.build_dataclass(BuckParams, entries, args.params)
    sets = read_gain_sets(config.read_text(args.tests))
    rows = simkit.gain_sweep(base, [gains for _, gains in sets])
    status = EXIT_OK
    out.write("label\tgains\teigenvalues without conditioning\teigenvalues with conditioning\tgap ratio\tdisplacement\n")
    for (label, gains), row in zip(sets, rows):
        gain_text = ",".join(_sig(g) for g in gains)
        if row.error is not None:
            sys.stderr.write(f"error: {label}: {row.error}\n")
            out.write(f"{label}\t{gain_text}\tfailed\tfailed\tnan\tnan\n")
            status = EXIT_RUNTIME
            continue
        out.write(
            f"{label}\t{gain_text}\t{' '.join(format_eigenvalues(row.no_sc))}\t"
            f"{' '.join(format_eigenvalues(row.with_sc))}\t{_sig(row.gap_ratio)}\t{_sig(row.displacement)}\n"
        )
    return status


# ---------------------------------------------------------------------------
# Entry point


def build_parser():
    parser = _Parser(prog="twoscale", description="Sensitivity-conditioning analysis and simulation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="eigenvalues, gap ratio and error bound of a linear loop")
    p.add_argument("params", help="parameter file (key = value)")
    p.add_argument("--plant", choices=("buck", "linear"), default="buck")
    p.add_argument("--gains", help="override PI gains: kp-v,ki-v,kp-i,ki-i")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run a scenario and export its trajectory")
    p.add_argument("scenario", help="scenario file (key = value plus event lines)")
    p.add_argument("--mode", choices=("none", "exact", "approx", "auto"))
    p.add_argument("--out", help="CSV output path (default: standard output)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="eigen-analysis of the buck loop over several gain sets")
    p.add_argument("params", help="buck parameter file; gains may be omitted")
    p.add_argument("--tests", required=True, help="file with one gain set per line")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except (UsageError, ParseError, InvalidScenario) as exc:
        sys.stderr.write(f"error: {_one_line(exc)}\n")
        return EXIT_USAGE
    except (TwoScaleError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {_one_line(exc)}\n")
        return EXIT_RUNTIME


def _one_line(exc):
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
