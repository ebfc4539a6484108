"""Command line surface: steady, trajectory, sweep, contour, validate.

Every command reads an optional config file, applies --set overrides,
and writes CSV or JSON to --out (stdout by default). Exit codes: 0 on
success, 1 for configuration problems, 2 for numerical failures, 3 when
a validation check fails.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys

from . import gaussian, validation
from .errors import ConfigError, SimulationError
from .gaussian import StationaryMoments
from .hilbert import expectation, number_op
from .models import reduced_feedback_liouvillian
from .scenario import ScenarioConfig, default_config, load_config, parse_config
from .sme import ensemble_mean, run_trajectory, steady_state

SWEEPABLE_KEYS = ("g", "eta", "gamma_h", "chi", "phi", "nu")

# LU on the (n_trunc+1)^2 kernel system; past this the check costs minutes
KERNEL_CHECK_MAX_TRUNC = 40

CONTOUR_POINTS = 256


def _fmt(value) -> str:
    """One CSV cell; floats keep full round-trip precision."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return value
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return format(float(value), ".17g")


def _quote(cell: str) -> str:
    if any(ch in cell for ch in ',"\n'):
        return '"' + cell.replace('"', '""') + '"'
    return cell


def _csv_table(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_quote(_fmt(v)) for v in row))
    return "\n".join(lines) + "\n"


def _clean(value):
    if isinstance(value, (bool, int, str)) or value is None:
        return value
    return float(value)


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2) + "\n"


def _write(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _report_text(pairs, fmt: str) -> str:
    """Key/value report as a two-column CSV table or a JSON object."""
    if fmt == "json":
        return _json_text({k: _clean(v) for k, v in pairs})
    return _csv_table(("key", "value"), pairs)


def _table_text(header, rows, fmt: str) -> str:
    if fmt == "json":
        payload = {
            "columns": list(header),
            "rows": [[_clean(v) for v in row] for row in rows],
        }
        return _json_text(payload)
    return _csv_table(header, rows)


def _load_scenario(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.set:
        cfg = parse_config("\n".join(args.set), base=cfg)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.out is not None:
        cfg = cfg.replace(output_path=args.out)
    if args.format is not None:
        cfg = cfg.replace(output_format=args.format)
    return cfg


def cmd_steady(cfg: ScenarioConfig) -> int:
    """Closed-form stationary report, kernel-checked at small dimensions."""
    params = cfg.system_params()
    bp = gaussian.bath_params(params)
    stable = gaussian.stability(params)
    pairs = [
        ("Gamma", bp.Gamma),
        ("N", bp.N),
        ("M_re", bp.M.real),
        ("M_im", bp.M.imag),
        ("physical", bp.is_physical),
        ("stable", stable),
    ]
    if not stable:
        pairs.append(("note", "unstable feedback sign: no stationary moments"))
        _write(_report_text(pairs, cfg.output_format), cfg.output_path)
        return 2
    moments = gaussian.stationary_moments(params)
    ellipse = gaussian.wigner_covariance(moments)
    g_opt, n_min = gaussian.optimal_gain(params)
    pairs += [
        ("zeta", moments.zeta),
        ("mu_re", moments.mu.real),
        ("mu_im", moments.mu.imag),
        ("sigma_xx", ellipse.sigma_xx),
        ("sigma_pp", ellipse.sigma_pp),
        ("sigma_xp", ellipse.sigma_xp),
        ("g_opt", g_opt),
        ("n_min", n_min),
    ]
    if cfg.n_trunc <= KERNEL_CHECK_MAX_TRUNC:
        L = reduced_feedback_liouvillian(params, cfg.basis_spec())
        rho = steady_state(L)
        kernel_n = expectation(rho, number_op(cfg.basis_spec())).real
        pairs += [
            ("kernel_n", kernel_n),
            ("kernel_rel_dev", abs(kernel_n - moments.zeta) / max(moments.zeta, 1e-12)),
        ]
    else:
        pairs.append(("kernel_check", f"skipped: n_trunc > {KERNEL_CHECK_MAX_TRUNC}"))
    _write(_report_text(pairs, cfg.output_format), cfg.output_path)
    return 0


def _summary_path(path: str) -> str:
    stem, dot, ext = path.rpartition(".")
    if not dot:
        return path + "_summary"
    return f"{stem}_summary.{ext}"


def cmd_trajectory(cfg: ScenarioConfig, jobs: int) -> int:
    """Conditioned trajectories plus, for n_traj >= 2, an ensemble summary."""
    params = cfg.system_params()
    if params.chi == 0.0 and params.g != 0.0:
        raise ConfigError("feedback needs a nonzero measurement strength (chi = 0 with g != 0)")
    spec = cfg.basis_spec()
    icfg = cfg.integrator_config()

    def one(index: int):
        try:
            return run_trajectory(params, spec, icfg, traj_index=index)
        except SimulationError as err:
            raise SimulationError(f"trajectory {index}: {err}") from err

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, range(cfg.n_traj)))
    else:
        records = [one(i) for i in range(cfg.n_traj)]

    header = ("traj", "time", "x_cond", "p_cond", "n_cond", "current")
    rows = []
    for index, rec in enumerate(records):
        for k in range(rec.times.shape[0]):
            rows.append(
                (index, rec.times[k], rec.x_cond[k], rec.p_cond[k], rec.n_cond[k], rec.current[k])
            )

    summary_header = ("time", "x_mean", "x_se", "p_mean", "p_se", "n_mean", "n_se")
    summary_rows = None
    if cfg.n_traj >= 2:
        ens = ensemble_mean(records, spec)
        summary_rows = [
            (
                ens.times[k],
                ens.x_mean[k],
                ens.x_se[k],
                ens.p_mean[k],
                ens.p_se[k],
                ens.n_mean[k],
                ens.n_se[k],
            )
            for k in range(ens.times.shape[0])
        ]

    if cfg.output_format == "json":
        payload = {
            "columns": list(header),
            "rows": [[_clean(v) for v in row] for row in rows],
            "ensemble": None,
        }
        if summary_rows is not None:
            payload["ensemble"] = {
                "columns": list(summary_header),
                "rows": [[_clean(v) for v in row] for row in summary_rows],
            }
        _write(_json_text(payload), cfg.output_path)
        return 0

    main_text = _csv_table(header, rows)
    if summary_rows is None:
        _write(main_text, cfg.output_path)
        return 0
    summary_text = _csv_table(summary_header, summary_rows)
    if cfg.output_path is None:
        sys.stdout.write(main_text + "\n" + summary_text)
    else:
        _write(main_text, cfg.output_path)
        _write(summary_text, _summary_path(cfg.output_path))
    return 0


def cmd_sweep(cfg: ScenarioConfig, key: str, values, jobs: int = 1) -> int:
    """Closed-form stationary row per value; bad rows are flagged, not fatal."""
    if key not in SWEEPABLE_KEYS:
        raise ConfigError(f"key must be one of {', '.join(SWEEPABLE_KEYS)}, not {key!r}")
    header = (key, "N", "zeta", "abs_mu", "stable", "error")

    def one(value):
        try:
            params = cfg.replace(**{key: value}).system_params()
            bp = gaussian.bath_params(params)
            if gaussian.stability(params):
                moments = gaussian.stationary_moments(params)
                return (value, bp.N, moments.zeta, abs(moments.mu), True, "")
            return (value, bp.N, None, None, False, "")
        except (ConfigError, SimulationError, ValueError) as err:
            return (value, None, None, None, None, str(err))

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, values))
    else:
        rows = [one(v) for v in values]
    _write(_table_text(header, rows, cfg.output_format), cfg.output_path)
    return 0


def cmd_contour(cfg: ScenarioConfig) -> int:
    """Phase-space uncertainty contours: initial thermal, stationary, ground."""
    params = cfg.system_params()
    moments = gaussian.stationary_moments(params)
    contours = (
        ("thermal", StationaryMoments(zeta=params.n0, mu=0.0)),
        ("feedback", moments),
        ("ground", StationaryMoments(zeta=0.0, mu=0.0)),
    )
    header = ("label", "x", "p")
    rows = []
    for label, m in contours:
        ellipse = gaussian.wigner_covariance(m)
        for x, p in gaussian.contour_polyline(ellipse, CONTOUR_POINTS):
            rows.append((label, x, p))
    _write(_table_text(header, rows, cfg.output_format), cfg.output_path)
    return 0


def cmd_validate(level: str, out, fmt: str) -> int:
    """Run the self-check registry; timings go to stdout, never to --out."""
    results = validation.run_checks(level)
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        sys.stdout.write(f"{res.name:<26s} {status} {res.seconds:10.2f} s  {res.detail}\n")
    n_pass = sum(1 for res in results if res.passed)
    sys.stdout.write(f"{level}: {n_pass}/{len(results)} checks passed\n")
    if out is not None:
        if fmt == "json":
            payload = {
                "level": level,
                "passed": n_pass == len(results),
                "checks": [
                    {"name": res.name, "passed": res.passed, "detail": res.detail}
                    for res in results
                ],
            }
            _write(_json_text(payload), out)
        else:
            header = ("name", "passed", "detail")
            rows = [(res.name, res.passed, res.detail) for res in results]
            _write(_csv_table(header, rows), out)
    return 0 if n_pass == len(results) else 3


def _parse_values(text: str):
    values = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            values.append(float(token))
        except ValueError as err:
            raise ConfigError(f"--values entry {token!r} is not a number") from err
    if not values:
        raise ConfigError("--values must list at least one number")
    return values


def _add_common(sub) -> None:
    sub.add_argument("--config", help="scenario config file (key = value lines)")
    sub.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    sub.add_argument("--out", help="output path (default: stdout)")
    sub.add_argument("--format", choices=("csv", "json"), help="output format")
    sub.add_argument("--seed", type=int, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trapcool",
        description="Feedback cooling of a trapped particle: stationary theory, "
        "conditioned trajectories, and self-checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    steady = sub.add_parser("steady", help="closed-form stationary report")
    _add_common(steady)

    traj = sub.add_parser("trajectory", help="conditioned trajectory ensemble")
    _add_common(traj)
    traj.add_argument("--jobs", type=int, default=1, help="worker threads")

    sweep = sub.add_parser("sweep", help="stationary table over one parameter")
    _add_common(sweep)
    sweep.add_argument("--key", required=True, help=f"one of {', '.join(SWEEPABLE_KEYS)}")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--jobs", type=int, default=1, help="worker threads")

    contour = sub.add_parser("contour", help="phase-space uncertainty contours")
    _add_common(contour)

    val = sub.add_parser("validate", help="run the self-check suite")
    val.add_argument("--level", choices=("fast", "full"), default="fast")
    val.add_argument("--out", help="report path (timings stay on stdout)")
    val.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args.level, args.out, args.format)
        cfg = _load_scenario(args)
        if args.command == "steady":
            return cmd_steady(cfg)
        if args.command == "trajectory":
            if args.jobs < 1:
                raise ConfigError("--jobs must be at least 1")
            return cmd_trajectory(cfg, args.jobs)
        if args.command == "sweep":
            if args.jobs < 1:
                raise ConfigError("--jobs must be at least 1")
            return cmd_sweep(cfg, args.key, _parse_values(args.values), args.jobs)
        return cmd_contour(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except SimulationError as err:
        print(f"simulation error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
