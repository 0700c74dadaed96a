"""Command-line front end: single runs, sweeps, aggregation, and studies.

Commands write versioned CSV artifacts under an output directory:

    run         per-seed returns.csv + config.json
    sweep       manifest.json plus one run directory per grid cell
    aggregate   summary.csv (per-cell metric + bootstrap CI) and curves.csv
    stationary  stationary.csv from the alpha study
    variance    variance.csv of estimator traces and importance-variance terms

Every CSV starts with a `# mixpol-csv <name> v<N>` line; aggregation refuses
files whose schema line does not match its reader. All randomness flows from
config seeds, so rerunning any command with the same inputs reproduces its
output files byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, sac
from .numerics import autodiff as ad
from .numerics.rng import Rng

SCHEMA_VERSIONS = {
    "returns": 1, "summary": 1, "curves": 1, "stationary": 1, "variance": 1,
}

SWEEP_AXES = ("alpha", "critic_lr", "kappa", "n_components",
              "target_entropy_coef")

STUDY_ALPHA_GRID = (0.05, 0.1, 0.2, 0.22, 0.24, 0.25, 0.26, 0.275, 0.28,
                    0.3, 0.325, 0.35, 0.375, 0.4, 0.45, 0.5, 0.6)

SUMMARY_COLUMNS = ("cell", "env_kind", "policy", "estimator", "alpha",
                   "critic_lr", "kappa", "n_components",
                   "target_entropy_coef", "metric", "window", "n_seeds",
                   "point", "ci_lower", "ci_upper", "best")

CURVE_COLUMNS = ("cell", "step", "mean_return", "ci_lower", "ci_upper",
                 "n_seeds")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config plumbing


@dataclass
class ExperimentConfig:
    label: str = "run"
    seeds: tuple = (0,)
    agent: sac.SACConfig = field(
        default_factory=lambda: sac.default_config("bimodal-bandit"))
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seeds: must list at least one seed")
        for axis, values in self.sweep.items():
            if axis not in SWEEP_AXES:
                raise ConfigError(
                    f"sweep.{axis}: unknown axis (have {SWEEP_AXES})")
            if not values:
                raise ConfigError(f"sweep.{axis}: grid must be non-empty")

    def to_dict(self) -> dict:
        d = {"label": self.label, "seeds": list(self.seeds),
             "agent": dataclasses.asdict(self.agent),
             "sweep": {k: list(v) for k, v in self.sweep.items()}}
        d["agent"]["hidden"] = list(self.agent.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        extra = set(d) - {"label", "seeds", "agent", "sweep"}
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        agent = d.pop("agent", {})
        try:
            agent_cfg = sac.SACConfig(**agent)
        except TypeError as e:
            raise ConfigError(f"agent: {e}") from e
        except ValueError as e:
            raise ConfigError(f"agent: {e}") from e
        return cls(agent=agent_cfg, **d)


def apply_overrides(d: dict, sets: list) -> dict:
    """Apply --set key=value pairs onto the config dict, dotted keys nest."""
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p} is not a section")
        node[parts[-1]] = value
    return d


def load_experiment(args) -> ExperimentConfig:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            d = json.load(fh)
    else:
        d = ExperimentConfig().to_dict()
    apply_overrides(d, args.set or [])
    if args.seed is not None:
        d["seeds"] = [args.seed]
    return ExperimentConfig.from_dict(d)


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json(path: Path, obj):
    _write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, name: str, header, rows):
    lines = [f"# mixpol-csv {name} v{SCHEMA_VERSIONS[name]}", ",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    _write_atomic(path, "\n".join(lines) + "\n")


def read_csv(path: Path, name: str):
    """(header, rows-of-strings) after checking the schema line."""
    lines = path.read_text(encoding="utf-8").splitlines()
    expect = f"# mixpol-csv {name} v{SCHEMA_VERSIONS[name]}"
    if not lines or lines[0] != expect:
        raise ConfigError(f"{path}: expected schema line {expect!r}, "
                          f"got {lines[0] if lines else 'empty file'!r}")
    header = lines[1].split(",")
    return header, [line.split(",") for line in lines[2:]]


# ---------------------------------------------------------------------------
# run / sweep


def run_seed(agent_cfg: sac.SACConfig, seed: int, run_dir: Path):
    """One training run; returns the abort message or None. Partial rows are
    still written when training aborts."""
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg = dataclasses.replace(agent_cfg, seed=seed)
    cfg_dict = dataclasses.asdict(cfg)
    cfg_dict["hidden"] = list(cfg.hidden)
    aborted = None
    try:
        record = sac.train_loop(cfg)
    except sac.TrainingAborted as e:
        record = e.record
        aborted = str(e)
    write_json(run_dir / "config.json", {"agent": cfg_dict, "aborted": aborted})
    write_csv(run_dir / "returns.csv", "returns", sac.CSV_COLUMNS, record.rows)
    return aborted


def _sweep_worker(payload):
    agent_dict, seed, run_dir = payload
    return run_seed(sac.SACConfig(**agent_dict), seed, Path(run_dir))


def cmd_run(cfg: ExperimentConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    failures = 0
    for seed in cfg.seeds:
        run_dir = out / f"seed-{seed}"
        aborted = run_seed(cfg.agent, seed, run_dir)
        if aborted:
            failures += 1
            print(f"seed {seed}: ABORTED ({aborted}); partial rows kept",
                  file=sys.stderr)
        else:
            print(f"seed {seed}: wrote {run_dir / 'returns.csv'}")
    return 3 if failures else 0


def sweep_cells(cfg: ExperimentConfig):
    """Manifest entries: one per (grid point, seed); `cell` groups seeds."""
    axes = {axis: list(cfg.sweep.get(axis) or [getattr(cfg.agent, axis)])
            for axis in SWEEP_AXES}
    cells = []
    for i, combo in enumerate(itertools.product(*axes.values())):
        params = dict(zip(SWEEP_AXES, combo))
        for seed in cfg.seeds:
            cells.append({"index": len(cells), "cell": f"cell-{i:04d}",
                          "seed": seed, "dir": f"cell-{i:04d}/seed-{seed}",
                          "params": params})
    return axes, cells


def cmd_sweep(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    axes, cells = sweep_cells(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    write_json(out / "manifest.json",
               {"label": cfg.label, "axes": axes, "cells": cells})
    jobs = []
    for entry in cells:
        agent = dataclasses.replace(cfg.agent, **entry["params"])
        jobs.append((dataclasses.asdict(agent), entry["seed"],
                     str(out / entry["dir"])))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            aborts = list(pool.map(_sweep_worker, jobs))
    else:
        aborts = [_sweep_worker(j) for j in jobs]
    failures = sum(a is not None for a in aborts)
    n_grid = len({e["cell"] for e in cells})
    print(f"sweep: {n_grid} grid cells x {len(cfg.seeds)} seeds, "
          f"{failures} aborted")
    return 3 if failures else 0


# ---------------------------------------------------------------------------
# aggregate


def read_returns(run_dir: Path):
    """returns.csv -> (steps, returns) float arrays, or None if absent."""
    path = run_dir / "returns.csv"
    if not path.exists():
        return None
    header, rows = read_csv(path, "returns")
    if tuple(header) != sac.CSV_COLUMNS:
        raise ConfigError(f"{path}: unexpected columns {header}")
    steps = np.array([float(r[1]) for r in rows])
    rets = np.array([float(r[3]) for r in rows])
    return steps, rets


def final_window_mean(steps, rets, total_steps, window):
    cut = (1.0 - window) * total_steps
    mask = steps > cut
    if not mask.any():
        return np.nan
    return float(rets[mask].mean())


def auc_metric(steps, rets):
    if steps.size == 0:
        return np.nan
    widths = np.diff(np.concatenate([[0.0], steps]))
    return float(np.sum(widths * rets))


def discover_cells(in_dir: Path):
    """Group manifest run entries by grid cell; plain run dirs are one cell."""
    manifest = in_dir / "manifest.json"
    if manifest.exists():
        entries = json.loads(manifest.read_text(encoding="utf-8"))["cells"]
        groups = {}
        for e in entries:
            groups.setdefault(e["cell"], []).append(e["dir"])
        return [{"cell": name, "dirs": dirs}
                for name, dirs in sorted(groups.items())]
    return [{"cell": ".", "dirs": None}]


def _cell_runs(in_dir: Path, cell):
    """Per-seed (steps, returns) plus the cell's resolved agent config."""
    if cell["dirs"] is None:
        base = in_dir / cell["cell"]
        run_dirs = sorted(base.glob("seed-*"),
                          key=lambda p: int(p.name.split("-")[1]))
    else:
        run_dirs = [in_dir / d for d in cell["dirs"]]
    runs, agent, missing = [], None, []
    for run_dir in run_dirs:
        data = read_returns(run_dir)
        if data is None:
            missing.append(run_dir.name)
            continue
        runs.append(data)
        if agent is None:
            cfg = json.loads((run_dir / "config.json").read_text("utf-8"))
            agent = cfg["agent"]
    return runs, agent, missing


def curve_rows(cell_name, runs, total_steps, rng, n_bins=100):
    """Mean learning curve with bootstrap CIs on aligned step bins."""
    rows = []
    bins = np.linspace(total_steps / n_bins, total_steps, n_bins)
    for b in bins:
        vals = []
        for steps, rets in runs:
            mask = steps <= b
            if mask.any():
                vals.append(rets[mask][-1])
        if not vals:
            continue
        ci = analysis.bootstrap_ci(vals, rng=rng.substream(cell_name, int(b)))
        rows.append((cell_name, int(b), ci.point, ci.lower, ci.upper,
                     len(vals)))
    return rows


def cmd_aggregate(in_dir: Path, metric: str, window: float, out: Path,
                  seed: int) -> int:
    cells = discover_cells(in_dir)
    rng = Rng(seed)
    summary, curves = [], []
    for cell in cells:
        runs, agent, missing = _cell_runs(in_dir, cell)
        for name in missing:
            print(f"cell {cell['cell']}: missing run {name}", file=sys.stderr)
        if not runs:
            print(f"cell {cell['cell']}: no completed runs", file=sys.stderr)
            continue
        total_steps = agent["total_steps"]
        if metric == "final-window":
            vals = [final_window_mean(s, r, total_steps, window)
                    for s, r in runs]
        else:
            vals = [auc_metric(s, r) for s, r in runs]
        vals = [v for v in vals if np.isfinite(v)]
        if not vals:
            print(f"cell {cell['cell']}: no usable {metric} values",
                  file=sys.stderr)
            continue
        ci = analysis.bootstrap_ci(vals, rng=rng.substream("cell", cell["cell"]))
        summary.append([cell["cell"], agent["env_kind"], agent["policy"],
                        agent["estimator"], agent["alpha"], agent["critic_lr"],
                        agent["kappa"], agent["n_components"],
                        agent["target_entropy_coef"], metric, window,
                        len(vals), ci.point, ci.lower, ci.upper, 0])
        curves.extend(curve_rows(cell["cell"], runs, total_steps,
                                 rng.substream("curve")))
    if not summary:
        print("aggregate: no completed cells found", file=sys.stderr)
        return 2
    best = {}
    for i, row in enumerate(summary):
        key = (row[2], row[3])
        if key not in best or row[12] > summary[best[key]][12]:
            best[key] = i
    for i in best.values():
        summary[i][15] = 1
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "summary.csv", "summary", SUMMARY_COLUMNS, summary)
    write_csv(out / "curves.csv", "curves", CURVE_COLUMNS, curves)
    print(f"aggregate: {len(summary)} cells -> {out / 'summary.csv'}")
    return 0


# ---------------------------------------------------------------------------
# stationary / variance


def _check_keys(config: dict, allowed):
    unknown = sorted(set(config) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config fields: {', '.join(unknown)}")


def cmd_stationary(config: dict, out: Path) -> int:
    _check_keys(config, ("alphas", "trials", "families", "seed"))
    alphas = config.get("alphas", list(STUDY_ALPHA_GRID))
    trials = config.get("trials", 100)
    families = tuple(config.get("families", ("gaussian", "gm")))
    seed = config.get("seed", 0)
    rows = analysis.sweep_alpha_study(analysis.study_bandit(), alphas,
                                      trials=trials, rng=Rng(seed),
                                      families=families)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "stationary.csv", "stationary",
              ("alpha", "family", "best_j0", "best_j", "frac_bimodal",
               "frac_converged"),
              [(r.alpha, r.family, r.best_j0, r.best_j, r.frac_bimodal,
                r.frac_converged) for r in rows])
    print(f"stationary: {len(rows)} rows -> {out / 'stationary.csv'}")
    return 0


def _critic_sin(a):
    return ad.sin(ad.reduce_sum(a, axis=-1))


def _critic_sin3_plus_square(a):
    return ad.reduce_sum(ad.sin(3.0 * a) + ad.square(a), axis=-1)


# graph critic, plain-reward twin; the standard problem is the squashed head
REFERENCE_CRITICS = {
    "sin": (_critic_sin, np.sin, False),
    "sin3-plus-square": (_critic_sin3_plus_square,
                         lambda a: np.sin(3.0 * a) + a * a, True),
}


def cmd_variance(config: dict, out: Path) -> int:
    _check_keys(config, ("kinds", "m", "alpha", "use_baseline", "samples",
                         "seed", "critic"))
    kinds = tuple(config.get("kinds", ("lr", "rp", "half-rp", "mrp",
                                       "gumbel-rp")))
    m = config.get("m", 128)
    alpha = config.get("alpha", 0.1)
    use_baseline = config.get("use_baseline", True)
    samples = config.get("samples", 1_000_000)
    seed = config.get("seed", 0)
    critic = config.get("critic", "sin3-plus-square")
    if critic not in REFERENCE_CRITICS:
        raise ConfigError(f"critic: unknown reference critic {critic!r}")
    critic_fn, reward_fn, squashed = REFERENCE_CRITICS[critic]
    report = analysis.estimate_gradient_variance(
        analysis.reference_head(squashed=squashed), critic_fn, alpha, kinds,
        m=m, rng=Rng(seed), use_baseline=use_baseline)
    # the importance-sampling terms live on raw component densities, so they
    # always use the unsquashed head
    terms = analysis.check_importance_variance_terms(
        analysis.reference_head(), reward_fn, n=samples,
        rng=Rng(seed).substream("terms"))
    rows = [(f"trace:{k}", report.traces[k], report.trace_se[k], m)
            for k in kinds]
    rows += [("term:mu", terms.term_mu, terms.se_mu, samples),
             ("term:sigma", terms.term_sigma, terms.se_sigma, samples),
             ("term:reward", terms.term_reward, terms.se_reward, samples)]
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "variance.csv", "variance",
              ("name", "value", "se", "repeats"), rows)
    print(f"variance: {len(rows)} rows -> {out / 'variance.csv'}")
    return 0


def load_plain_config(args) -> dict:
    config = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    apply_overrides(config, args.set or [])
    if args.seed is not None:
        config["seed"] = args.seed
    return config


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixpol", description="mixture-policy gradient laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_out):
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--seed", type=int, help="override the run seed(s)")
        p.add_argument("--out", default=default_out, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (dotted keys, JSON values)")

    common(sub.add_parser("run", help="train one config across seeds"),
           "runs/run")
    p = sub.add_parser("sweep", help="train a hyperparameter grid")
    common(p, "runs/sweep")
    p.add_argument("--workers", type=int, default=1,
                   help="process pool size for sweep cells")
    p = sub.add_parser("aggregate", help="summarize runs into metric tables")
    p.add_argument("dir", help="run or sweep directory")
    p.add_argument("--metric", choices=("final-window", "auc"),
                   default="final-window")
    p.add_argument("--window", type=float, default=0.10,
                   help="final-window fraction of total steps")
    p.add_argument("--out", default=None,
                   help="output directory (default: the input dir)")
    p.add_argument("--seed", type=int, default=0,
                   help="bootstrap resampling seed")
    common(sub.add_parser("stationary", help="alpha study on the bimodal "
                          "bandit"), "runs/stationary")
    common(sub.add_parser("variance", help="estimator variance diagnostics"),
           "runs/variance")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(load_experiment(args), Path(args.out))
        if args.command == "sweep":
            return cmd_sweep(load_experiment(args), Path(args.out),
                             args.workers)
        if args.command == "aggregate":
            out = Path(args.out) if args.out else Path(args.dir)
            return cmd_aggregate(Path(args.dir), args.metric, args.window,
                                 out, args.seed)
        if args.command == "stationary":
            return cmd_stationary(load_plain_config(args), Path(args.out))
        if args.command == "variance":
            return cmd_variance(load_plain_config(args), Path(args.out))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
