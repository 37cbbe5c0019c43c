"""Campaign runner: seeded multi-repeat tuning experiments with CSV outputs.

A campaign runs one benchmark case with one optimizer for a number of
repeats. Repeat r uses seed base_seed + r for everything it does, so a
campaign is a pure function of its configuration and the outputs are
byte-identical across reruns.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import plant
from .domain import denormalize
from .optimizer import GiboConfig, TuningRun, run_gibo, run_random_search

OPTIMIZERS = ("gibo", "random")

# Number formatting for all CSV output: 17 significant digits round-trips
# float64 exactly, which makes determinism byte-testable.
FMT = "%.17g"


class ConfigError(ValueError):
    """Experiment configuration is malformed."""


_GIBO_OVERRIDE_KEYS = {
    "batch_size",
    "eta_max",
    "eta_min",
    "n_iterations",
    "beta",
    "objective_scale",
    "optimize_noise",
    "n_starts",
    "lengthscale",
    "signal_variance",
    "noise_variance",
    "prior_mean",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One campaign: a case, an optimizer, a budget, and seeding."""

    case: str
    optimizer: str
    budget: int
    repeats: int = 10
    base_seed: int = 0
    out_dir: str = "results"
    gibo_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")
        if self.budget < 1:
            raise ConfigError("budget must be at least 1")
        unknown = set(self.gibo_overrides) - _GIBO_OVERRIDE_KEYS
        if unknown:
            raise ConfigError(f"unknown gibo override keys: {sorted(unknown)}")


_TOP_KEYS = {"case", "optimizer", "budget", "repeats", "base_seed", "out_dir", "gibo"}


def parse_config(doc: dict, optimizer_required: bool = True) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a parsed JSON document.

    Unknown keys are rejected so a typo cannot silently change an experiment.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = {"case", "budget"} - set(doc)
    if missing:
        raise ConfigError(f"missing required config keys: {sorted(missing)}")
    if optimizer_required and "optimizer" not in doc:
        raise ConfigError("missing required config key: 'optimizer'")
    gibo = doc.get("gibo", {})
    if not isinstance(gibo, dict):
        raise ConfigError("'gibo' must be an object of GiboConfig overrides")
    return ExperimentConfig(
        case=doc["case"],
        optimizer=doc.get("optimizer", "gibo"),
        budget=int(doc["budget"]),
        repeats=int(doc.get("repeats", 10)),
        base_seed=int(doc.get("base_seed", 0)),
        out_dir=str(doc.get("out_dir", "results")),
        gibo_overrides=dict(gibo),
    )


def load_config(path, optimizer_required: bool = True) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc, optimizer_required=optimizer_required)


@dataclass(frozen=True)
class CampaignSummary:
    """Aggregated result of one campaign."""

    config: ExperimentConfig
    runs: tuple[TuningRun, ...]
    finals: np.ndarray        # per-repeat final objective
    best_matrix: np.ndarray   # (repeats, budget) best-so-far, inf before first success
    median_trace: np.ndarray  # (budget,) elementwise median over repeats
    q25_trace: np.ndarray
    q75_trace: np.ndarray
    crash_counts: np.ndarray  # per repeat
    wall_seconds: float


def _gibo_config(cfg: ExperimentConfig, case: plant.BenchmarkCase, seed: int) -> GiboConfig:
    overrides = dict(cfg.gibo_overrides)
    overrides.setdefault("objective_scale", case.objective_scale)
    return GiboConfig(max_evals=cfg.budget, seed=seed, **overrides)


def _run_one_repeat(args) -> TuningRun:
    cfg, repeat = args
    case = plant.make_case(cfg.case)
    objective = plant.CaseObjective(case)
    seed = cfg.base_seed + repeat
    if cfg.optimizer == "random":
        return run_random_search(objective, cfg.budget, seed)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x57A27)))
    x0 = rng.uniform(case.start_lower, case.start_upper)
    return run_gibo(objective, x0, _gibo_config(cfg, case, seed))


def _worker_count() -> int:
    raw = os.environ.get("TUNE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"TUNE_THREADS must be an integer, got {raw!r}")
    return max(n, 0)


def run_campaign(cfg: ExperimentConfig) -> CampaignSummary:
    """Run all repeats of one campaign and aggregate best-so-far traces.

    Repeats are independent; with TUNE_THREADS > 1 they run in separate
    processes, committed in repeat order so results are identical to a
    sequential run.
    """
    plant.make_case(cfg.case)  # fail fast on unknown cases
    t0 = time.perf_counter()
    jobs = [(cfg, r) for r in range(cfg.repeats)]
    workers = _worker_count()
    if workers > 1 and cfg.repeats > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.repeats)) as pool:
            runs = tuple(pool.map(_run_one_repeat, jobs))
    else:
        runs = tuple(_run_one_repeat(job) for job in jobs)
    wall = time.perf_counter() - t0

    best = np.full((cfg.repeats, cfg.budget), np.inf)
    for i, run in enumerate(runs):
        trace = np.asarray(run.best_trace)
        best[i, : trace.size] = trace
        if trace.size and trace.size < cfg.budget:
            best[i, trace.size:] = trace[-1]
    finals = np.array([run.final_objective for run in runs])
    crashes = np.array([run.n_crashes for run in runs])
    return CampaignSummary(
        config=cfg,
        runs=runs,
        finals=finals,
        best_matrix=best,
        median_trace=np.median(best, axis=0),
        q25_trace=np.percentile(best, 25, axis=0),
        q75_trace=np.percentile(best, 75, axis=0),
        crash_counts=crashes,
        wall_seconds=wall,
    )


def _num(x: float) -> str:
    """Serialize one float; empty field for missing values (inf/nan)."""
    if x is None or math.isinf(x) or math.isnan(x):
        return ""
    return FMT % x


def write_outputs(summary: CampaignSummary, out_dir) -> list[Path]:
    """Write evals.csv, summary.csv, and trace.dat for one campaign."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = summary.config
    case = plant.make_case(cfg.case)
    d = case.d

    evals_path = out / "evals.csv"
    header = ["repeat", "eval_index", "iteration", "kind"]
    header += [f"x_{i + 1}" for i in range(d)]
    header += ["outcome", "objective", "best_so_far"]
    lines = [",".join(header)]
    for r, run in enumerate(summary.runs):
        for j, rec in enumerate(run.evaluations):
            x_raw = denormalize(rec.x, case.domain)
            row = [str(r), str(j + 1), str(rec.iteration), rec.kind]
            row += [FMT % v for v in x_raw]
            if rec.outcome.is_success:
                row += ["success", _num(rec.outcome.value), _num(run.best_trace[j])]
            else:
                row += ["crash", "", _num(run.best_trace[j])]
            lines.append(",".join(row))
    evals_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    summary_path = out / "summary.csv"
    lines = ["row_type,repeat,eval_index,final_objective,median_best,q25_best,q75_best"]
    for r in range(cfg.repeats):
        lines.append(f"final,{r},,{_num(summary.finals[r])},,,")
    for j in range(cfg.budget):
        lines.append(
            "trace,,%d,,%s,%s,%s"
            % (j + 1, _num(summary.median_trace[j]), _num(summary.q25_trace[j]), _num(summary.q75_trace[j]))
        )
    summary_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    trace_path = out / "trace.dat"
    lines = ["# eval_index median_best q25_best q75_best"]
    for j in range(cfg.budget):
        lines.append(
            "%d %s %s %s"
            % (
                j + 1,
                _num(summary.median_trace[j]) or "inf",
                _num(summary.q25_trace[j]) or "inf",
                _num(summary.q75_trace[j]) or "inf",
            )
        )
    trace_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [evals_path, summary_path, trace_path]


def run_compare(cfg: ExperimentConfig, out_dir) -> dict[str, CampaignSummary]:
    """Run both optimizers with the same budget and write a joint summary."""
    out = Path(out_dir)
    results = {}
    for name in OPTIMIZERS:
        sub_cfg = ExperimentConfig(
            case=cfg.case,
            optimizer=name,
            budget=cfg.budget,
            repeats=cfg.repeats,
            base_seed=cfg.base_seed,
            out_dir=str(out / name),
            gibo_overrides=cfg.gibo_overrides,
        )
        summary = run_campaign(sub_cfg)
        write_outputs(summary, out / name)
        results[name] = summary

    lines = ["optimizer,median_final,q25_final,q75_final,best_final,total_crashes"]
    for name in OPTIMIZERS:
        s = results[name]
        lines.append(
            "%s,%s,%s,%s,%s,%d"
            % (
                name,
                _num(float(np.median(s.finals))),
                _num(float(np.percentile(s.finals, 25))),
                _num(float(np.percentile(s.finals, 75))),
                _num(float(np.min(s.finals))),
                int(np.sum(s.crash_counts)),
            )
        )
    (out / "compare.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return results
