"""Command-line front end.

    idla simulate|donuts|stabilize|fluctuations|oracle-check|render [options]

Options may also come from a ``--config`` file of ``key=value`` lines
(``#`` starts a comment); flags given on the command line win.  Every
randomised command needs an explicit ``--seed``.  Exit status: 0 on
success, 2 for a bad configuration, 3 when a walk exceeds its step budget.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import aggregate as agg_mod
from . import donut as donut_mod
from . import render as render_mod
from . import stats
from .lattice import Ball, ConeSpec, as_fraction
from .walk import (DEFAULT_MAX_STEPS, RngKey, SizeCapExceeded, StepBudgetExceeded,
                   empirical_distribution, exact_exit_distribution, sample_exit_sites,
                   total_variation)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3

PROTOCOLS = ("levels", "clocks", "waves", "truncated-infinite")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str
    seed: Optional[int] = None
    dim: int = 3
    n: int = 1
    level: Optional[int] = None
    window: Optional[int] = None
    alpha: int = 1
    epsilon: Optional[Fraction] = None
    replicates: int = 1
    protocol: str = "levels"
    out: str = "out"
    margin: Optional[int] = None
    waves: int = 5
    l0: Optional[int] = None
    walks: int = 10_000
    samples: int = 100_000
    n_values: list = field(default_factory=list)
    snapshot: Optional[str] = None
    style: str = "projection"
    plane: int = 0
    b: float = 0.1
    max_steps: int = DEFAULT_MAX_STEPS


_INT_KEYS = {"seed", "dim", "n", "level", "window", "alpha", "replicates", "margin", "waves",
             "l0", "walks", "samples", "plane", "max_steps"}


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _coerce(key: str, value):
    if value is None:
        return None
    try:
        if key in _INT_KEYS:
            return int(value)
        if key == "epsilon":
            return as_fraction(value)
        if key == "b":
            return float(value)
        if key == "n_values":
            if isinstance(value, str):
                return [int(v) for v in value.replace(",", " ").split()]
            return [int(v) for v in value]
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for k, v in vars(args).items():
        if k in ("config", "command") or v is None:
            continue
        values[k] = v
    cfg = ExperimentConfig(command=args.command)
    known = set(ExperimentConfig.__dataclass_fields__) - {"command"}
    for k, v in values.items():
        if k not in known:
            raise ConfigError(f"unknown configuration key {k!r}")
        setattr(cfg, k, _coerce(k, v))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.dim < 2:
        raise ConfigError("dim must be at least 2")
    if cfg.n < 0:
        raise ConfigError("n must be non-negative")
    if cfg.replicates < 1:
        raise ConfigError("replicates must be at least 1")
    if cfg.alpha < 1:
        raise ConfigError("alpha must be a positive integer")
    if cfg.max_steps < 1:
        raise ConfigError("max_steps must be positive")
    if cfg.protocol not in PROTOCOLS:
        raise ConfigError(f"protocol must be one of {', '.join(PROTOCOLS)}")
    if cfg.command != "render" and cfg.seed is None:
        raise ConfigError("an explicit --seed is required")
    if cfg.seed is not None and not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.command == "donuts":
        if cfg.epsilon is None or not 0 < cfg.epsilon < Fraction(1, 2):
            raise ConfigError("donuts needs --epsilon in (0, 1/2)")
        if cfg.l0 is None or cfg.level is None or not 0 < cfg.level < cfg.l0:
            raise ConfigError("donuts needs --l0 and --level with 0 < level < l0")
    if cfg.command == "simulate":
        if cfg.protocol == "truncated-infinite":
            if cfg.window is None or cfg.window < 1:
                raise ConfigError("truncated-infinite needs --window >= 1")
        elif cfg.level is None or cfg.level < 0:
            raise ConfigError("simulate needs --level >= 0")
    if cfg.command == "stabilize" and (cfg.level is None or cfg.level < 1):
        raise ConfigError("stabilize needs --level >= 1")
    if cfg.command == "render" and not cfg.snapshot:
        raise ConfigError("render needs --snapshot")
    if cfg.command == "oracle-check" and cfg.samples < 1:
        raise ConfigError("samples must be positive")


# -- helpers -------------------------------------------------------------------


def _threads(jobs: int) -> int:
    cap = os.environ.get("IDLA_THREADS")
    try:
        n = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        n = 1
    return max(1, min(n, jobs))


def _map(fn, items: list) -> list:
    """Run fn over items on the worker pool; results come back in input order."""
    workers = _threads(len(items))
    if workers == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dumps(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"), sort_keys=True)


def _outdir(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def report_record(rep: agg_mod.BuildReport, replicate: int) -> dict:
    rec = {
        "kind": "build", "replicate": replicate, "protocol": rep.protocol, "n": rep.n,
        "level": rep.level, "dimension": rep.aggregate.dim, "count": rep.aggregate.count,
        "particles": rep.particles_launched, "sources": rep.sources_fired,
        "total_steps": rep.total_steps,
    }
    if rep.per_wave is not None:
        rec["per_wave"] = rep.per_wave
    if rep.extra:
        rec["extra"] = rep.extra
    return rec


def build_one(cfg: ExperimentConfig, replicate: int) -> agg_mod.BuildReport:
    rng = RngKey(cfg.seed, (replicate,))
    if cfg.protocol == "levels":
        return agg_mod.build_A_n_M(cfg.n, cfg.level, cfg.dim, rng, max_steps=cfg.max_steps)
    if cfg.protocol == "clocks":
        return agg_mod.build_A_n_M_clocks(cfg.n, cfg.level, cfg.dim, rng, max_steps=cfg.max_steps)
    if cfg.protocol == "waves":
        return agg_mod.build_waves(cfg.n, cfg.level, cfg.alpha, cfg.waves, cfg.dim, rng,
                                   max_steps=cfg.max_steps)
    margin = cfg.margin if cfg.margin is not None else cfg.n
    return agg_mod.build_truncated_infinite(cfg.n, cfg.window, cfg.alpha, margin, cfg.dim, rng,
                                            max_steps=cfg.max_steps)


# -- commands ------------------------------------------------------------------


def _simulate_job(job):
    cfg, r = job
    rep = build_one(cfg, r)
    buf = io.StringIO()
    agg_mod.write_snapshot(buf, rep.aggregate, n=cfg.n, protocol=cfg.protocol, replicate=r,
                           seed=cfg.seed)
    path = Path(cfg.out) / f"snapshot_{r:04d}.ndjson"
    _write_atomic(path, buf.getvalue())
    return _dumps(report_record(rep, r))


def cmd_simulate(cfg: ExperimentConfig) -> int:
    out = _outdir(cfg)
    lines = _map(_simulate_job, [(cfg, r) for r in range(cfg.replicates)])
    _write_atomic(out / "reports.ndjson", "".join(line + "\n" for line in lines))
    print(f"wrote {cfg.replicates} snapshot(s) to {out}")
    return EXIT_OK


def cmd_donuts(cfg: ExperimentConfig) -> int:
    out = _outdir(cfg)
    fam = donut_mod.donut_family(cfg.l0, cfg.level, cfg.epsilon)
    cone = ConeSpec(cfg.epsilon)
    starts = donut_mod.outer_ring(fam, cfg.dim)
    rep = donut_mod.mc_crossing_experiment(fam, cone, starts, cfg.walks, RngKey(cfg.seed, (0,)),
                                           max_steps=cfg.max_steps)
    buf = io.StringIO()
    donut_mod.write_crossing_csv(buf, rep)
    _write_atomic(out / "crossings.csv", buf.getvalue())
    meta = {"kind": "donuts", "k": fam.k, "n_fitting": fam.n_fitting, "crossable": fam.crossable,
            "epsilon": str(fam.epsilon), "l0": str(fam.l0), "M": str(fam.M),
            "walks": rep.walks, "censored": rep.censored, "k_lower_bound": fam.lower_bound()}
    _write_atomic(out / "donuts.ndjson", _dumps(meta) + "\n")
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _stabilize_job(job):
    cfg, r = job
    rep = agg_mod.build_waves(cfg.n, cfg.level, cfg.alpha, cfg.waves, cfg.dim,
                              RngKey(cfg.seed, (r,)), max_steps=cfg.max_steps)
    return rep.per_wave


def cmd_stabilize(cfg: ExperimentConfig) -> int:
    out = _outdir(cfg)
    waves = _map(_stabilize_job, [(cfg, r) for r in range(cfg.replicates)])
    reports = [agg_mod.BuildReport(None, 0, 0, cfg.n, "waves", 0, per_wave=w,
                                   extra={"M": cfg.level}) for w in waves]
    rows = stats.stabilization_rate(reports, cfg.level)
    buf = io.StringIO()
    stats.write_csv(buf, ["j", "replicates", "occurred", "fraction"],
                    [(r.j, r.replicates, r.occurred, r.fraction) for r in rows])
    _write_atomic(out / "stabilization.csv", buf.getvalue())
    nd = io.StringIO()
    stats.write_ndjson(nd, [r.record() for r in rows])
    _write_atomic(out / "stabilization.ndjson", nd.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _fluct_job(job):
    cfg, n, r = job
    W = n ** cfg.alpha if cfg.window is None else cfg.window
    margin = cfg.margin if cfg.margin is not None else n
    # the window is already n^alpha, so the build itself uses exponent 1
    rep = agg_mod.build_truncated_infinite(n, W, 1, margin, cfg.dim,
                                           RngKey(cfg.seed, (n, r)), max_steps=cfg.max_steps)
    return stats.fluctuation(rep.aggregate, n, W)


FLUCT_COLUMNS = ["n", "replicate", "W", "delta_inner", "delta_outer", "norm_inner", "norm_outer"]


def cmd_fluctuations(cfg: ExperimentConfig) -> int:
    out = _outdir(cfg)
    ns = cfg.n_values or [cfg.n]
    jobs = [(cfg, n, r) for n in ns for r in range(cfg.replicates)]
    reps = _map(_fluct_job, jobs)
    rows = [(f.n, r, f.window, f.delta_inner, f.delta_outer, f.norm_inner, f.norm_outer)
            for (_, _, r), f in zip(jobs, reps)]
    buf = io.StringIO()
    stats.write_csv(buf, FLUCT_COLUMNS, rows)
    _write_atomic(out / "fluctuations.csv", buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def oracle_cases(dim: int) -> list:
    """(name, sites, start) triples used by oracle-check."""
    if dim == 2:
        return [
            ("point", [(0, 0)], (0, 0)),
            ("ball-1", Ball((0, 0), 1).sites(), (0, 0)),
            ("ball-5", Ball((0, 0), 5).sites(), (2, -1)),
        ]
    o = (0,) * dim
    return [
        ("point", [o], o),
        ("ball-1", Ball(o, 1).sites(), o),
        ("ball-3", Ball(o, 3).sites(), o),
    ]


def cmd_oracle_check(cfg: ExperimentConfig) -> int:
    out = _outdir(cfg)
    if cfg.snapshot:
        A, _ = agg_mod.load_snapshot(cfg.snapshot)
        start = tuple(A.sites()[0].tolist()) if len(A) else None
        cases = [("snapshot", [tuple(z) for z in A.sites().tolist()], start)]
    else:
        cases = oracle_cases(cfg.dim)
    rows = []
    for idx, (name, sites, start) in enumerate(cases):
        if start is None:
            raise ConfigError("snapshot is empty")
        exact = exact_exit_distribution(sites, start)
        A = agg_mod.Aggregate(len(start), sites)
        sample = sample_exit_sites(A, start, RngKey(cfg.seed, (idx,)), cfg.samples, cfg.max_steps)
        tv = total_variation(empirical_distribution(sample), exact.probs)
        rows.append((name, len(sites), cfg.samples, tv))
    buf = io.StringIO()
    stats.write_csv(buf, ["case", "sites", "samples", "tv"], rows)
    _write_atomic(out / "oracle.csv", buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_render(cfg: ExperimentConfig) -> int:
    A, header = agg_mod.load_snapshot(cfg.snapshot)
    n = int(header.get("n", cfg.n))
    if cfg.window is not None:
        W = cfg.window
    elif len(A):
        W = int(np.abs(A.sites()[:, 1:]).max())
    else:
        W = 0
    if A.dim != 3:
        raise render_mod.UnsupportedDimension(f"rendering needs d = 3, got d = {A.dim}")
    if cfg.style == "projection":
        img = render_mod.projection_image(A, n, W)
    elif cfg.style == "slice":
        img = render_mod.slice_image(A, n, W, plane=cfg.plane)
    else:
        raise ConfigError("style must be projection or slice")
    buf = io.StringIO()
    render_mod.write_ppm(buf, img)
    target = Path(cfg.out)
    if target.suffix.lower() != ".ppm":
        target.mkdir(parents=True, exist_ok=True)
        target = target / (Path(cfg.snapshot).stem + f"_{cfg.style}.ppm")
    else:
        target.parent.mkdir(parents=True, exist_ok=True)
    _write_atomic(target, buf.getvalue())
    print(f"wrote {target}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "donuts": cmd_donuts,
    "stabilize": cmd_stabilize,
    "fluctuations": cmd_fluctuations,
    "oracle-check": cmd_oracle_check,
    "render": cmd_render,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idla", description="Hyperplane-source IDLA experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed (required for random commands)")
        p.add_argument("--dim", type=int)
        p.add_argument("--n", type=int, help="particles per source")
        p.add_argument("--level", type=int, help="source level M (or floor level for donuts)")
        p.add_argument("--alpha", type=int)
        p.add_argument("--epsilon", help="cone angle as P/Q")
        p.add_argument("--replicates", type=int)
        p.add_argument("--out", help="output directory (render: directory or .ppm file)")
        p.add_argument("--protocol", choices=PROTOCOLS)
        p.add_argument("--window", type=int, help="trusted window W of truncated builds")
        p.add_argument("--margin", type=int, help="extra levels beyond W^alpha (default n)")
        p.add_argument("--waves", type=int, help="last wave index J")
        p.add_argument("--l0", type=int, help="outer donut radius")
        p.add_argument("--walks", type=int, help="free walks for the donut experiment")
        p.add_argument("--samples", type=int, help="Monte Carlo samples per oracle case")
        p.add_argument("--n-values", dest="n_values", help="comma separated n sweep")
        p.add_argument("--snapshot", help="NDJSON snapshot to read")
        p.add_argument("--style", choices=("projection", "slice"))
        p.add_argument("--plane", type=int, help="z_3 of the rendered slice")
        p.add_argument("--b", type=float, help="tentacle threshold (exploratory)")
        p.add_argument("--max-steps", dest="max_steps", type=int)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        return COMMANDS[cfg.command](cfg)
    except (ConfigError, render_mod.UnsupportedDimension, donut_mod.InvalidAngle,
            donut_mod.EmptyFamily, SizeCapExceeded) as exc:
        print(f"idla: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepBudgetExceeded as exc:
        print(f"idla: step budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
