"""Command-line entry point: ``spdescore <command> --config run.json``.

Exit codes: 0 ok, 1 config error, 2 I/O error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import subprocess
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load, validate
from .errors import DimensionError, InvalidParameterError
from .forward import config_hash, sample_ensemble
from .malliavin import malliavin_covariance
from .reverse import ReverseConfig, discrete_moments, run_reverse
from .score import make_score_context, score_full
from .spectral import hs_condition_value
from .verify import run_suite, report_json

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VERIFY = 0, 1, 2, 3
FMT = "%.17g"


class _IOFailure(Exception):
    pass


def version_string() -> str:
    """``<version>`` or ``<version>+<git describe>`` when run from a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    tag = out.stdout.strip()
    return f"{__version__}+g{tag}" if out.returncode == 0 and tag else __version__


def _fmt(x) -> str:
    return FMT % x


def write_matrix(path: Path, rows, header):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    lines = [",".join(header)]
    lines += [",".join(map(_fmt, r)) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def write_ensemble(path: Path, states):
    states = np.atleast_2d(states)
    header = ["sample_id"] + [f"mode_{k}" for k in range(1, states.shape[1] + 1)]
    lines = [",".join(header)]
    lines += [f"{i}," + ",".join(map(_fmt, r)) for i, r in enumerate(states)]
    path.write_text("\n".join(lines) + "\n")


def _modes(n, prefix="mode"):
    return [f"{prefix}_{k}" for k in range(1, n + 1)]


def _json(obj) -> str:
    def conv(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(type(o))

    return json.dumps(obj, indent=2, sort_keys=True, default=conv) + "\n"


def write_meta(out: Path, command: str, cfg: RunConfig):
    echo = cfg.echo()
    meta = {
        "command": command,
        "config": echo,
        "config_hash": config_hash(config=json.dumps(echo, sort_keys=True)),
        "version": version_string(),
    }
    (out / "meta.json").write_text(_json(meta))


def cmd_simulate(cfg: RunConfig, out: Path, workers: int):
    ens = sample_ensemble(
        cfg.spectrum(), cfg.q(), cfg.u0(), cfg.horizon, cfg["n_samples"],
        mode=cfg["simulate"]["mode"], seed=cfg.seed, n_steps=cfg.n_steps, workers=workers,
    )
    write_ensemble(out / "ensemble.csv", ens.states)
    return EXIT_OK


def cmd_covariance(cfg: RunConfig, out: Path, workers: int):
    spec, Q = cfg.spectrum(), cfg.q()
    cov = malliavin_covariance(spec, Q, cfg.horizon, cfg["pinv_threshold"])
    names = _modes(cfg.n_modes)
    write_matrix(out / "gamma.csv", cov.gamma, names)
    write_matrix(out / "gamma_pinv.csv", cov.pinv, names)
    write_matrix(out / "eigenvalues.csv", cov.eigvals[:, None], ["eigenvalue"])
    hs = hs_condition_value(spec, Q, cfg.horizon)
    gap = abs(cov.trace - hs) / abs(hs) if hs else abs(cov.trace)
    checks = {"t": cfg.horizon, "trace": _fmt(cov.trace), "hs_condition": _fmt(hs), "relative_gap": _fmt(gap),
              "rank": cov.rank}
    (out / "trace_check.json").write_text(_json(checks))
    return EXIT_OK


def cmd_score(cfg: RunConfig, out: Path, workers: int):
    """Score along ``u = mean + offset * sigma_h * h`` for each configured offset."""
    ctx = make_score_context(cfg.spectrum(), cfg.q(), cfg.u0(), cfg.horizon, cfg["pinv_threshold"])
    n = cfg.n_modes
    h = np.array(cfg["score"].get("direction") or np.eye(n)[0], dtype=float)
    if not np.any(h):
        raise InvalidParameterError("score.direction: must be nonzero")
    h = h / np.linalg.norm(h)
    sigma = float(np.sqrt(max(h @ ctx.cov.gamma @ h, 0.0)))
    offsets = np.asarray(cfg["score"]["offsets"], dtype=float)
    u = ctx.mean + offsets[:, None] * sigma * h
    s = score_full(ctx, u)
    write_matrix(out / "score.csv", np.column_stack([offsets, u, s]),
                 ["offset"] + _modes(n, "u") + _modes(n, "score"))
    return EXIT_OK


def cmd_reverse(cfg: RunConfig, out: Path, workers: int):
    spec, Q, u0 = cfg.spectrum(), cfg.q(), cfg.u0()
    r = cfg["reverse"]
    rc = ReverseConfig(cfg.horizon, cfg.n_steps, r.get("t_min"), r["mode"], cfg.seed, r["grid"])
    res = run_reverse(spec, Q, u0, rc, cfg["n_samples"], workers=workers, pinv_threshold=cfg["pinv_threshold"])
    m_d, P_d = discrete_moments(spec, Q, u0, rc, cfg["pinv_threshold"])
    write_ensemble(out / "start.csv", res.start)
    write_ensemble(out / "end.csv", res.end)
    names = _modes(cfg.n_modes)
    write_matrix(out / "target_mean.csv", np.vstack([res.mean_T, res.mean_tmin, m_d]), names)
    write_matrix(out / "target_cov_T.csv", res.cov_T, names)
    write_matrix(out / "target_cov_tmin.csv", res.cov_tmin, names)
    write_matrix(out / "scheme_cov_tmin.csv", P_d, names)
    (out / "targets.json").write_text(_json({
        "T": cfg.horizon, "t_min": rc.t_min,
        "target_mean_rows": ["S(T)u0", "S(t_min)u0", "scheme mean at t_min"],
    }))
    return EXIT_OK


def _print_reports(reports, stream):
    for r in reports:
        print(f"{r.verdict.upper():4s}  {r.check_id:32s} {r.metric:.3e} <= {r.threshold:.3e}", file=stream)


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spdescore", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "terminal ensemble (exact transition or Euler-Maruyama)",
        "covariance": "gamma, its pseudoinverse, eigenvalues and the trace cross-check",
        "score": "exact score along a line of perturbations",
        "reverse": "reverse-time sampling from the exact law at T back to t_min",
        "verify": "run the identity suite and write a JSON report",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", type=Path, required=name != "verify", help="JSON run config or meta.json")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        sp.add_argument("--workers", type=int, default=1, help="threads for Monte Carlo blocks")
        if name == "verify":
            sp.add_argument("--profile", choices=["quick", "full"], default="quick")
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "covariance": cmd_covariance,
    "score": cmd_score,
    "reverse": cmd_reverse,
}


def _prepare_out(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise _IOFailure(f"output directory {path} is not writable: {e}") from None
    return path


def run(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = None
        if args.config is not None:
            try:
                cfg = load(args.config)
            except OSError as e:
                raise _IOFailure(f"cannot read config {args.config}: {e}") from None
            if args.seed is not None:
                cfg = cfg.with_seed(args.seed)

        if args.command == "verify":
            seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
            out = _prepare_out(args.out or Path(cfg["output_dir"] if cfg else "out"))
            reports = run_suite(args.profile, seed, workers=args.workers)
            (out / "report.json").write_text(report_json(reports))
            _print_reports(reports, sys.stdout)
            meta_cfg = cfg or validate({"n_modes": 1, "q": {"family": "power_law", "amplitude": 1.0, "decay": 2.0},
                                        "horizon": 1.0, "seed": int(seed)})
            write_meta(out, f"verify --profile {args.profile}", meta_cfg.with_seed(seed))
            return EXIT_OK if all(r.verdict == "pass" for r in reports) else EXIT_VERIFY

        out = _prepare_out(args.out or Path(cfg["output_dir"]))
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            code = COMMANDS[args.command](cfg, out, args.workers)
        write_meta(out, args.command, cfg)
        return code
    except (InvalidParameterError, DimensionError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (_IOFailure, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
