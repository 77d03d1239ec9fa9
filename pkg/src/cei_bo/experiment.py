"""File-backed experiment configuration and the batch runner behind the CLI.

A configuration is a YAML mapping::

    schema_version: 1
    benchmark: griewank6        # a benchmark id, or gp_sampled with gp_seed
    gp_seed: null
    acquisitions: [corrected_ei, ei]
    ucb_beta: null
    noise_fraction: 0.1         # per-query std drawn from (0, p * range]
    noise_std: null             # constant std instead (overrides noise_fraction)
    iterations: 60
    init_count: null            # null means 3 * dim
    kappa: 0.0
    kappa_grid: []              # thresholds for the profit table
    kernel: matern52
    master_seed: 0
    seeds: [1, 2, 3]
    output_dir: null

Seeds are paired across acquisitions: run ``(acquisition, s)`` uses the same
initial design and the same noise stream for every acquisition, and only the
acquisition optimizer's stream depends on the acquisition.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from . import benchmarks as bm
from ._io import atomic_write_text
from .acquisition import AcqKind, AcquisitionSpec
from .exceptions import InputError
from .kernels import KernelFamily
from .loop import RunAborted, RunConfig, RunTrace, compute_profit, run_bo

SCHEMA_VERSION = 1
OUTPUT_ENV = "CEI_BO_OUT"
DEFAULT_OUTPUT_DIR = "results"
BOOTSTRAP_SAMPLES = 2000


class ConfigError(InputError):
    """Invalid experiment configuration; ``problems`` holds one line per issue."""

    def __init__(self, problems: list, source: str = "<config>"):
        self.problems = list(problems)
        self.source = source
        super().__init__("\n".join(f"{source}:{p}" for p in self.problems))


@dataclass
class ExperimentConfig:
    benchmark: str
    seeds: list
    iterations: int = 60
    acquisitions: list = field(default_factory=lambda: ["corrected_ei", "ei"])
    gp_seed: int | None = None
    ucb_beta: float | None = None
    noise_fraction: float = 0.1
    noise_std: float | None = None
    init_count: int | None = None
    kappa: float = 0.0
    kappa_grid: list = field(default_factory=list)
    kernel: str = "matern52"
    master_seed: int = 0
    output_dir: str | None = None
    schema_version: int = SCHEMA_VERSION

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        order = ["schema_version", "benchmark", "gp_seed", "acquisitions", "ucb_beta",
                 "noise_fraction", "noise_std", "iterations", "init_count", "kappa",
                 "kappa_grid", "kernel", "master_seed", "seeds", "output_dir"]
        return {k: getattr(self, k) for k in order}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None,
                              allow_unicode=False, width=100)

    @classmethod
    def from_yaml(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(text)
            lines = _key_lines(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"{mark.line + 1}" if mark is not None else "?"
            raise ConfigError([f"{where}: YAML syntax error: {getattr(exc, 'problem', exc)}"], source)
        if not isinstance(raw, dict):
            raise ConfigError(["1: top level must be a mapping"], source)
        return cls.from_dict(raw, source, lines)

    @classmethod
    def from_dict(cls, raw: dict, source: str = "<config>", lines: dict | None = None):
        lines = lines or {}
        known = {f.name for f in fields(cls)}
        problems = []

        def bad(key, msg):
            problems.append(f"{lines.get(key, '?')}: field '{key}': {msg}")

        for key in raw:
            if key not in known:
                bad(key, "unknown field")
        for key in ("benchmark", "seeds"):
            if key not in raw:
                problems.append(f"?: field '{key}': required")
        if problems:
            raise ConfigError(problems, source)
        cfg = cls(**{k: v for k, v in raw.items() if k in known})
        problems = cfg.problems(lines)
        if problems:
            raise ConfigError(problems, source)
        return cfg

    # -- validation --------------------------------------------------------

    def problems(self, lines: dict | None = None) -> list:
        """Every invariant violation, formatted ``line: field 'name': message``."""
        lines = lines or {}
        out = []

        def bad(key, msg):
            out.append(f"{lines.get(key, '?')}: field '{key}': {msg}")

        def is_int(v):
            return isinstance(v, int) and not isinstance(v, bool)

        def is_num(v):
            return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)

        if self.schema_version != SCHEMA_VERSION:
            bad("schema_version", f"unsupported version {self.schema_version!r} (expected {SCHEMA_VERSION})")
        fn = None
        if not isinstance(self.benchmark, str):
            bad("benchmark", "must be a string")
        elif self.benchmark == "gp_sampled":
            if not is_int(self.gp_seed) or self.gp_seed < 0:
                bad("gp_seed", "gp_sampled needs a nonnegative integer gp_seed")
        elif self.benchmark not in bm.BENCHMARK_NAMES:
            bad("benchmark", f"unknown benchmark {self.benchmark!r}; "
                f"choose from {', '.join(bm.BENCHMARK_NAMES + ('gp_sampled',))}")
        else:
            fn = bm.get_benchmark(self.benchmark)
        if not isinstance(self.acquisitions, list) or not self.acquisitions:
            bad("acquisitions", "must be a nonempty list")
        else:
            seen = set()
            for a in self.acquisitions:
                try:
                    kind = AcqKind.parse(a)
                except InputError as exc:
                    bad("acquisitions", str(exc))
                    continue
                if kind in seen:
                    bad("acquisitions", f"{kind.value} listed twice")
                seen.add(kind)
            if AcqKind.UCB in seen and not (is_num(self.ucb_beta) and self.ucb_beta > 0):
                bad("ucb_beta", "ucb needs a positive ucb_beta")
        if not is_num(self.noise_fraction) or self.noise_fraction < 0:
            bad("noise_fraction", "must be a nonnegative number")
        if self.noise_std is not None and (not is_num(self.noise_std) or self.noise_std < 0):
            bad("noise_std", "must be null or a nonnegative number")
        if not is_int(self.iterations) or self.iterations < 1:
            bad("iterations", "must be a positive integer")
        if self.init_count is not None and (not is_int(self.init_count) or self.init_count < 1):
            bad("init_count", "must be null or a positive integer")
        if not is_num(self.kappa) or self.kappa < 0:
            bad("kappa", "must be a nonnegative number")
        if not isinstance(self.kappa_grid, list) or not all(is_num(k) and k >= 0 for k in self.kappa_grid):
            bad("kappa_grid", "must be a list of nonnegative numbers")
        try:
            KernelFamily.parse(self.kernel)
        except (InputError, ValueError) as exc:
            bad("kernel", str(exc))
        if not is_int(self.master_seed) or not 0 <= self.master_seed < 2**64:
            bad("master_seed", "must be an integer in [0, 2^64)")
        if not isinstance(self.seeds, list) or not self.seeds:
            bad("seeds", "must be a nonempty list")
        elif not all(is_int(s) and s >= 0 for s in self.seeds):
            bad("seeds", "must contain nonnegative integers")
        elif len(set(self.seeds)) != len(self.seeds):
            bad("seeds", "contains duplicates")
        if self.output_dir is not None and not isinstance(self.output_dir, str):
            bad("output_dir", "must be null or a string")
        if out or fn is None:
            return out
        # the loop's own invariants, checked before anything runs
        for a in self.acquisitions:
            try:
                self.run_config(fn, a, 0)
            except InputError as exc:
                key = "init_count" if "init" in str(exc) else "iterations"
                bad(key, str(exc))
                break
        return out

    # -- derived objects ---------------------------------------------------

    def benchmark_function(self) -> bm.BenchmarkFunction:
        return bm.get_benchmark(self.benchmark, self.gp_seed)

    def noise_model(self) -> bm.NoiseModel:
        return bm.NoiseModel(self.noise_fraction, self.noise_std)

    def run_config(self, fn, acquisition, seed: int, kappa: float | None = None) -> RunConfig:
        kind = AcqKind.parse(acquisition)
        spec = AcquisitionSpec(kind, self.ucb_beta if kind is AcqKind.UCB else None)
        return RunConfig(
            bounds=tuple(map(tuple, fn.bounds)),
            max_iters=self.iterations,
            acquisition=spec,
            init_count=self.init_count,
            kappa=self.kappa if kappa is None else kappa,
            kernel_family=KernelFamily.parse(self.kernel),
            seed=derive_seed(self.master_seed, seed),
        )


def _key_lines(text: str) -> dict:
    """Map each top-level key to its 1-based line number."""
    node = yaml.compose(text)
    if node is None or not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"0: cannot read file: {exc.strerror}"], str(path)) from None
    return ExperimentConfig.from_yaml(text, str(path))


def derive_seed(master_seed: int, seed: int) -> int:
    """64-bit run seed for seed index ``seed`` under ``master_seed``."""
    return int(np.random.SeedSequence([master_seed, seed]).generate_state(1, dtype=np.uint64)[0])


def noise_rng(master_seed: int, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, seed, 1]))


def resolve_output_dir(cli_value: str | None, cfg: ExperimentConfig) -> str:
    return cli_value or cfg.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT_DIR


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


@dataclass
class RunOutcome:
    acquisition: str
    seed: int
    trace: RunTrace
    error: str | None = None


def _run_task(args) -> RunOutcome:
    cfg, acquisition, seed, kappa = args
    fn = cfg.benchmark_function()
    objective, truth, optimum = bm.as_maximization(fn, cfg.noise_model(), noise_rng(cfg.master_seed, seed))
    rc = cfg.run_config(fn, acquisition, seed, kappa)
    name = AcqKind.parse(acquisition).value
    try:
        return RunOutcome(name, seed, run_bo(rc, objective, truth, optimum))
    except RunAborted as exc:
        return RunOutcome(name, seed, exc.trace, str(exc))
    except Exception as exc:  # numerical failure inside the model
        empty = RunTrace(rc, (), None, None, None, None)
        return RunOutcome(name, seed, empty, f"{type(exc).__name__}: {exc}")


def run_all(cfg: ExperimentConfig, parallel: int = 1, kappa: float | None = None) -> list:
    """All (acquisition, seed) runs, in config order."""
    tasks = [(cfg, a, s, kappa) for a in cfg.acquisitions for s in cfg.seeds]
    if parallel > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_run_task, tasks))
    return [_run_task(t) for t in tasks]


# ---------------------------------------------------------------------------
# trace output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    return format(float(v), ".17g")


def trace_rows(trace: RunTrace, fn: bm.BenchmarkFunction) -> list:
    """One row per evaluation.

    ``acq_value`` is the acquisition value that selected ``x_t`` (empty for
    the initial design).  ``incumbent_mu`` and the gap metrics describe the
    incumbent chosen after ``y_t`` is observed; they are empty before the
    initial design is complete.  ``incumbent_mu`` is in the loop's
    maximization convention, i.e. the model's estimate of ``-f(x+)``.
    """
    records = list(trace.records)
    rows = []
    for i, r in enumerate(records):
        if not r.evaluated:
            continue
        nxt = records[i + 1] if i + 1 < len(records) else None
        if nxt is not None:
            x_plus, mu_plus = nxt.incumbent_x, nxt.incumbent_mu
        elif trace.final_incumbent_x is not None:
            x_plus, mu_plus = trace.final_incumbent_x, trace.final_incumbent_mu
        else:
            x_plus = mu_plus = None
        log_gap = bm.metric_log_gap(fn, x_plus) if x_plus is not None else None
        l2_gap = bm.metric_l2_gap(fn, x_plus) if x_plus is not None else None
        rows.append(dict(iter=r.t, x=r.x, y=r.y, noise_var=r.noise_var, incumbent_mu=mu_plus,
                         acq_value=r.acq_value, log_gap=log_gap, l2_gap=l2_gap))
    return rows


def trace_csv(trace: RunTrace, fn: bm.BenchmarkFunction) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", *[f"x{j}" for j in range(fn.dim)], "y", "noise_var", "incumbent_mu",
                "acq_value", "log_gap", "l2_gap"])
    for row in trace_rows(trace, fn):
        w.writerow([row["iter"], *[_fmt(v) for v in row["x"]], _fmt(row["y"]), _fmt(row["noise_var"]),
                    _fmt(row["incumbent_mu"]), _fmt(row["acq_value"]), _fmt(row["log_gap"]),
                    _fmt(row["l2_gap"])])
    return buf.getvalue()


def trace_filename(fn_id: str, acquisition: str, seed: int, partial: bool = False) -> str:
    return f"{fn_id}_{acquisition}_seed{seed}{'.partial' if partial else ''}.csv"


def bootstrap_median_band(values, rng: np.random.Generator, n_boot: int = BOOTSTRAP_SAMPLES):
    """Median and percentile-bootstrap 95% band of the median."""
    v = np.asarray(values, dtype=float)
    med = float(np.median(v))
    if v.size < 2:
        return med, med, med
    idx = rng.integers(0, v.size, size=(n_boot, v.size))
    meds = np.median(v[idx], axis=1)
    lo, hi = np.percentile(meds, [2.5, 97.5])
    return med, float(lo), float(hi)


def summarize(cfg: ExperimentConfig, outcomes: list, fn: bm.BenchmarkFunction) -> dict:
    """Per-acquisition, per-iteration medians of the gap metrics with bootstrap bands."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 99]))
    out = {"schema_version": SCHEMA_VERSION, "benchmark": fn.id, "iterations": cfg.iterations,
           "seeds": list(cfg.seeds), "failed_runs": [], "acquisitions": {}}
    for acquisition in dict.fromkeys(o.acquisition for o in outcomes):
        per_iter: dict = {}
        finals = []
        for o in outcomes:
            if o.acquisition != acquisition:
                continue
            if o.error is not None:
                out["failed_runs"].append({"acquisition": acquisition, "seed": o.seed, "error": o.error})
                continue
            rows = [r for r in trace_rows(o.trace, fn) if r["log_gap"] is not None]
            for r in rows:
                per_iter.setdefault(r["iter"], []).append((r["log_gap"], r["l2_gap"]))
            if rows:
                finals.append(rows[-1]["log_gap"])
        block = {"iter": [], "n": [], "median_log_gap": [], "log_gap_lo": [], "log_gap_hi": [],
                 "median_l2_gap": [], "l2_gap_lo": [], "l2_gap_hi": []}
        for t in sorted(per_iter):
            vals = np.array(per_iter[t])
            m, lo, hi = bootstrap_median_band(vals[:, 0], rng)
            m2, lo2, hi2 = bootstrap_median_band(vals[:, 1], rng)
            for k, v in zip(block, (t, len(vals), m, lo, hi, m2, lo2, hi2)):
                block[k].append(v)
        block["final_log_gaps"] = finals
        block["median_final_log_gap"] = float(np.median(finals)) if finals else None
        out["acquisitions"][acquisition] = block
    return out


def write_run_outputs(cfg: ExperimentConfig, outcomes: list, out_dir: str) -> dict:
    fn = cfg.benchmark_function()
    os.makedirs(out_dir, exist_ok=True)
    for o in outcomes:
        name = trace_filename(fn.id, o.acquisition, o.seed, partial=o.error is not None)
        atomic_write_text(os.path.join(out_dir, name), trace_csv(o.trace, fn))
    summary = summarize(cfg, outcomes, fn)
    atomic_write_text(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2) + "\n")
    atomic_write_text(os.path.join(out_dir, "config.yaml"), cfg.to_yaml())
    return summary


# ---------------------------------------------------------------------------
# profit
# ---------------------------------------------------------------------------


def profit_table(cfg: ExperimentConfig, outcomes: list, kappas) -> list:
    """Rows ``(kappa, acquisition, mean_profit, std_err, mean_t_kappa)``.

    ``outcomes`` must come from runs whose own threshold is no larger than
    any grid value (normally zero); each grid value is then applied by
    finding its stopping time in the recorded trajectory.
    """
    fn = cfg.benchmark_function()

    def truth(x):
        return -bm.eval_benchmark(fn, x)

    rows = []
    for kappa in kappas:
        for acquisition in dict.fromkeys(o.acquisition for o in outcomes):
            res = [compute_profit(o.trace, kappa, truth) for o in outcomes
                   if o.acquisition == acquisition and o.error is None]
            if not res:
                continue
            p = np.array([r.profit for r in res])
            se = float(p.std(ddof=1) / math.sqrt(p.size)) if p.size > 1 else 0.0
            rows.append(dict(kappa=float(kappa), acquisition=acquisition, mean_profit=float(p.mean()),
                             std_err=se, mean_t_kappa=float(np.mean([r.t_kappa for r in res]))))
    return rows


def profit_csv(rows: list) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kappa", "acquisition", "mean_profit", "std_err", "mean_t_kappa"])
    for r in rows:
        w.writerow([_fmt(r["kappa"]), r["acquisition"], _fmt(r["mean_profit"]), _fmt(r["std_err"]),
                    _fmt(r["mean_t_kappa"])])
    return buf.getvalue()
