"""Hidden-size sweep, k-fold aggregation, prediction reports and the full
reproduction bundle."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from brbpnn.data import (
    MODEL_I,
    MODEL_II,
    ModelSpecChoice,
    Normalizer,
    PeelingRecord,
    build_pairs,
    fold_plan,
    load_dataset,
)
from brbpnn.network import NetworkParams, NetworkSpec, flatten, predict, save_checkpoint
from brbpnn.trainer import HyperparameterError, TrainConfig, TrainingDiverged, TrainReport, train

log = logging.getLogger(__name__)

MODEL_INDEX = {"I": 1, "II": 2}
# (statistic -> value in percent) per output, for comparison in summaries
REFERENCE_RE = {
    "fn_max": {"max": 1.78, "min": 2.04e-4, "avg": 0.24},
    "ft_max": {"max": 0.91, "min": 0.0076, "avg": 0.19},
    "u_max": {"max": 9.68, "min": 0.06, "avg": 1.22},
    "alpha_det": {"max": 0.66, "min": 0.06, "avg": 0.30},
    "u_det": {"max": 9.85, "min": 0.15, "avg": 1.24},
}
# acceptance bands on RE in percent: output -> (avg limit, max limit or None)
RE_BANDS = {
    "fn_max": (1.0, None),
    "ft_max": (1.0, None),
    "alpha_det": (1.0, None),
    "u_max": (3.5, 15.0),
    "u_det": (3.5, 15.0),
}
# column order of the relative-error tables
TABLE_OUTPUTS = {"I": ("fn_max", "ft_max", "u_max"), "II": ("alpha_det", "u_det")}
# figure number -> (model kind, output)
FIGURES = {5: ("I", "fn_max"), 6: ("I", "ft_max"), 7: ("I", "u_max"), 8: ("II", "u_det"), 9: ("II", "alpha_det")}


class UndefinedRelativeError(ZeroDivisionError):
    pass


class StageError(RuntimeError):
    """Reproduction workflow failure, tagged with the stage that failed."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def mse(errors, n_t: int) -> float:
    """Sum of squared errors divided by the number of samples."""
    if n_t < 1:
        raise ValueError("n_t must be >= 1")
    e = np.asarray(errors, dtype=np.float64).ravel()
    return float(e @ e) / n_t


def relative_error(t, a):
    """``(t - a) / t``; elementwise for arrays."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t == 0):
        raise UndefinedRelativeError("relative error undefined for zero target")
    re = (t - np.asarray(a, dtype=np.float64)) / t
    return float(re) if re.ndim == 0 else re


def derive_seed(master: int, model: str, hidden: int, split: int, restart: int) -> np.random.SeedSequence:
    """Seed for one training run.

    The run's entropy is the tuple (master, model index, hidden size, split,
    restart) fed to numpy's SeedSequence, so every run has an independent,
    reproducible PCG64 stream regardless of scheduling order.
    """
    return np.random.SeedSequence([master, MODEL_INDEX[model], hidden, split, restart])


@dataclass(frozen=True)
class SweepConfig:
    model: ModelSpecChoice = MODEL_I
    hidden_sizes: tuple[int, ...] = tuple(range(1, 11))
    restarts: int = 15
    train: TrainConfig = TrainConfig()
    seed: int = 0
    hidden_activation: str = "tanh"
    splits: tuple[int, ...] = (1, 2, 3, 4, 5)
    jobs: int = 1

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden_sizes must be a nonempty set of positive sizes")

    def spec(self, hidden: int) -> NetworkSpec:
        return NetworkSpec.parse(f"1-{hidden}-{self.model.n_outputs}", hidden=self.hidden_activation)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.kind
        d.pop("jobs")
        return d


@dataclass
class RunResult:
    hidden: int
    split: int
    restart: int
    # metric fields are None for failed runs
    stop_reason: str | None
    epochs: int
    train_mse: float | None
    test_mse: float | None
    sse: float | None
    ssw: float | None
    gamma: float | None
    mu: float | None
    nu: float | None
    lam: float | None
    grad_norm: float | None
    log_evidence: float | None
    weights: list[float] = field(default_factory=list)
    error: str | None = None
    # per-epoch (epoch, gamma, E_w, E_D, mu, nu); kept in memory, not serialized
    trace: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepReport:
    config: SweepConfig
    runs: list[RunResult]
    curve: dict[int, float]
    counts: dict[int, int]
    failures: int
    selected: int
    # diagnostic only; selection uses the mean curve
    median_curve: dict[int, float] = field(default_factory=dict)

    def run(self, hidden: int, split: int, restart: int) -> RunResult:
        for r in self.runs:
            if (r.hidden, r.split, r.restart) == (hidden, split, restart):
                return r
        raise KeyError((hidden, split, restart))

    def best_run(self, hidden: int, split: int) -> RunResult:
        """Restart with the lowest training MSE (ties: lowest restart index)."""
        cands = [r for r in self.runs if r.hidden == hidden and r.split == split and r.ok]
        if not cands:
            raise LookupError(f"no successful run for hidden={hidden}, split={split}")
        return min(cands, key=lambda r: (r.train_mse, r.restart))

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "curve": {str(h): (v if np.isfinite(v) else None) for h, v in self.curve.items()},
            "counts": {str(h): v for h, v in self.counts.items()},
            "median_curve": {str(h): (v if np.isfinite(v) else None) for h, v in self.median_curve.items()},
            "failures": self.failures,
            "selected_hidden": self.selected,
            "runs": [{k: v for k, v in asdict(r).items() if k != "trace"} for r in self.runs],
        }


def _run_task(args) -> RunResult:
    config, records, hidden, split, restart = args
    spec = config.spec(hidden)
    norm = Normalizer.fit(records)
    sp = fold_plan()[split]
    u, t = build_pairs(records, config.model, sp.train, norm)
    ut, tt = build_pairs(records, config.model, sp.test, norm)
    rng = np.random.default_rng(derive_seed(config.seed, config.model.kind, hidden, split, restart))
    try:
        params, rep = train(spec, u, t, config.train, rng=rng)
    except (TrainingDiverged, HyperparameterError) as exc:
        return RunResult(hidden, split, restart, None, 0, *([None] * 10), None, [], repr(exc))
    f = rep.final
    test_mse = mse(tt - predict(params, ut), ut.shape[0])
    return RunResult(
        hidden, split, restart, rep.stop_reason, f.epoch, f.mse, test_mse, f.sse, f.ssw,
        f.gamma, f.mu, f.nu, f.lam, f.grad_norm, rep.log_evidence, flatten(params).tolist(),
        trace=np.array([[h["epoch"], h["gamma"], h["ssw"], h["sse"], h["mu"], h["nu"]] for h in rep.history]),
    )


def select_hidden_size(curve: dict[int, float], tolerance: float = 1.1) -> int:
    """Smallest hidden size whose mean MSE is within ``tolerance`` x the minimum."""
    finite = {h: v for h, v in curve.items() if np.isfinite(v)}
    if not finite:
        raise ValueError("no finite MSE values to select from")
    best = min(finite.values())
    return min(h for h, v in finite.items() if v <= tolerance * best)


def aggregate(runs: Sequence[RunResult], hidden_sizes) -> tuple[dict[int, float], dict[int, int]]:
    """Mean test MSE per hidden size over successful runs.

    Values are summed in (split, restart) order so the result does not depend
    on the order runs finished in.
    """
    curve, counts = {}, {}
    for h in hidden_sizes:
        vals = sorted(((r.split, r.restart), r.test_mse) for r in runs if r.hidden == h and r.ok)
        counts[h] = len(vals)
        curve[h] = float(np.mean([v for _, v in vals])) if vals else float("nan")
    return curve, counts


def median_curve(runs: Sequence[RunResult], hidden_sizes) -> dict[int, float]:
    """Median test MSE per hidden size; insensitive to the odd degenerate restart."""
    out = {}
    for h in hidden_sizes:
        vals = [r.test_mse for r in runs if r.hidden == h and r.ok]
        out[h] = float(np.median(vals)) if vals else float("nan")
    return out


def run_sweep(
    config: SweepConfig,
    records: Sequence[PeelingRecord] | None = None,
    progress: Callable[[RunResult], None] | None = None,
) -> SweepReport:
    records = list(records) if records is not None else load_dataset()
    tasks = [
        (config, records, h, s, r)
        for h in config.hidden_sizes
        for s in config.splits
        for r in range(config.restarts)
    ]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=4))
    else:
        results = []
        for task in tasks:
            results.append(_run_task(task))
            if progress:
                progress(results[-1])
    results.sort(key=lambda r: (r.hidden, r.split, r.restart))
    failures = sum(not r.ok for r in results)
    if failures:
        log.warning("%d of %d runs failed and are excluded from aggregates", failures, len(results))
    curve, counts = aggregate(results, config.hidden_sizes)
    return SweepReport(
        config, results, curve, counts, failures, select_hidden_size(curve), median_curve(results, config.hidden_sizes)
    )


@dataclass
class PredictionRow:
    split: int
    case: int
    theta_p: float
    output: str
    desired: float
    predicted: float
    re: float

    @property
    def re_pct(self) -> float:
        return 100.0 * abs(self.re)


@dataclass
class PredictionReport:
    model: str
    rows: list[PredictionRow]

    def stats(self) -> dict[str, dict[str, float]]:
        """Per output max/min/avg of |RE| in percent."""
        out = {}
        for name in dict.fromkeys(r.output for r in self.rows):
            v = np.array([r.re_pct for r in self.rows if r.output == name])
            out[name] = {"max": float(v.max()), "min": float(v.min()), "avg": float(v.mean())}
        return out

    def __add__(self, other: "PredictionReport") -> "PredictionReport":
        if other.model != self.model:
            raise ValueError("cannot combine reports of different models")
        return PredictionReport(self.model, self.rows + other.rows)


def predict_and_report(
    params: NetworkParams,
    choice: ModelSpecChoice,
    split: int,
    records: Sequence[PeelingRecord] | None = None,
    cases: Sequence[int] | None = None,
) -> PredictionReport:
    """Denormalized predictions and relative errors on a split's test cases."""
    records = list(records) if records is not None else load_dataset()
    norm = Normalizer.fit(records)
    cases = list(cases) if cases is not None else list(fold_plan()[split].test)
    u, t = build_pairs(records, choice, cases, norm)
    pred = norm.invert(predict(params, u), choice.outputs)
    desired = norm.invert(t, choice.outputs)
    by_case = {r.case: r for r in records}
    theta = [by_case[c].theta_p for c in cases]
    rows = []
    for i, case in enumerate(cases):
        for j, name in enumerate(choice.outputs):
            rows.append(
                PredictionRow(split, case, float(theta[i]), name, float(desired[i, j]), float(pred[i, j]),
                              relative_error(desired[i, j], pred[i, j]))
            )
    return PredictionReport(choice.kind, rows)


# -- reproduction bundle -----------------------------------------------------


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def bundle_digest(root) -> str:
    """sha256 over every file path and content below ``root``, in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode() + b"\0")
        h.update(p.read_bytes() + b"\0")
    return h.hexdigest()


@dataclass
class ModelResult:
    sweep: SweepReport
    final: dict[int, tuple[NetworkParams, TrainReport, RunResult]]
    predictions: PredictionReport


@dataclass
class Reproduction:
    out_dir: Path
    models: dict[str, ModelResult]
    digest: str

    def summary(self) -> list[dict]:
        """One row per output: measured vs published RE statistics and band verdict."""
        rows = []
        for kind, res in self.models.items():
            stats = res.predictions.stats()
            for name in TABLE_OUTPUTS[kind]:
                avg_lim, max_lim = RE_BANDS[name]
                s = stats[name]
                ok = s["avg"] <= avg_lim and (max_lim is None or s["max"] <= max_lim)
                rows.append({
                    "model": kind, "output": name, "avg": s["avg"], "max": s["max"], "min": s["min"],
                    "ref_avg": REFERENCE_RE[name]["avg"], "ref_max": REFERENCE_RE[name]["max"],
                    "avg_limit": avg_lim, "max_limit": max_lim, "pass": ok,
                })
        return rows


def retrain(config: SweepConfig, records, run: RunResult) -> tuple[NetworkParams, TrainReport]:
    """Re-run one sweep run from its derived seed."""
    norm = Normalizer.fit(records)
    u, t = build_pairs(records, config.model, fold_plan()[run.split].train, norm)
    rng = np.random.default_rng(derive_seed(config.seed, config.model.kind, run.hidden, run.split, run.restart))
    return train(config.spec(run.hidden), u, t, config.train, rng=rng)


def reproduce(
    out_dir,
    *,
    seed: int = 0,
    restarts: int = 15,
    hidden_sizes: Sequence[int] = tuple(range(1, 11)),
    train_config: TrainConfig = TrainConfig(),
    hidden_activation: str = "tanh",
    records: Sequence[PeelingRecord] | None = None,
    jobs: int = 1,
    progress: Callable[[str], None] | None = None,
) -> Reproduction:
    """Full workflow for both models: sweep, select, retrain, predict, emit.

    Writes ``sweep.json``, ``tables/t4..t7.csv``, ``figures/fig4..fig9.csv``
    and ``checkpoints/*.json`` below ``out_dir``.
    """
    say = progress or (lambda msg: None)
    stage = "load"
    try:
        records = list(records) if records is not None else load_dataset()
        models: dict[str, ModelResult] = {}
        for choice in (MODEL_I, MODEL_II):
            stage = f"sweep:{choice.kind}"
            cfg = SweepConfig(choice, tuple(hidden_sizes), restarts, train_config, seed, hidden_activation, jobs=jobs)
            say(f"{choice.name}: sweeping hidden sizes {list(hidden_sizes)} x {restarts} restarts x 5 splits")
            sweep = run_sweep(cfg, records)
            h = sweep.selected
            say(f"{choice.name}: selected structure {cfg.spec(h).label()}")
            final = {}
            preds = PredictionReport(choice.kind, [])
            for split in cfg.splits:
                stage = f"retrain:{choice.kind}"
                run = sweep.best_run(h, split)
                params, rep = retrain(cfg, records, run)
                if flatten(params).tolist() != run.weights:
                    raise RuntimeError(f"retrain of split {split} is not reproducible")
                final[split] = (params, rep, run)
                stage = f"predict:{choice.kind}"
                preds = preds + predict_and_report(params, choice, split, records)
            models[choice.kind] = ModelResult(sweep, final, preds)
        stage = "emit"
        out = Path(out_dir)
        _emit(out, models, records)
        return Reproduction(out, models, bundle_digest(out))
    except Exception as exc:
        raise StageError(stage, exc) from exc


def _emit(out: Path, models: dict[str, ModelResult], records) -> None:
    (out / "tables").mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    sweep_doc = {kind: res.sweep.to_dict() for kind, res in models.items()}
    (out / "sweep.json").write_text(json.dumps(sweep_doc, sort_keys=True) + "\n")

    # training summary per split, final structures
    for kind, table in (("I", "t4"), ("II", "t5")):
        rows = [["split", "structure", "restart", "epochs", "mse", "sse", "ssw", "gamma", "lambda", "gradient", "stop_reason"]]
        for split, (params, rep, run) in models[kind].final.items():
            f = rep.final
            rows.append([split, params.spec.label(), run.restart, f.epoch, _fmt(f.mse), _fmt(f.sse), _fmt(f.ssw),
                         _fmt(f.gamma), _fmt(f.lam), _fmt(f.grad_norm), rep.stop_reason])
        (out / "tables" / f"{table}.csv").write_text(_csv(rows))

    for kind, table in (("I", "t6"), ("II", "t7")):
        stats = models[kind].predictions.stats()
        names = TABLE_OUTPUTS[kind]
        rows = [["statistic"] + [f"{n}_re_pct" for n in names]]
        for stat in ("max", "min", "avg"):
            rows.append([stat] + [_fmt(stats[n][stat]) for n in names])
        (out / "tables" / f"{table}.csv").write_text(_csv(rows))

    rows = [["model", "hidden", "mean_test_mse", "median_test_mse", "n_runs"]]
    for kind, res in models.items():
        for h, v in res.sweep.curve.items():
            rows.append([kind, h, _fmt(v), _fmt(res.sweep.median_curve[h]), res.sweep.counts[h]])
    (out / "figures" / "fig4.csv").write_text(_csv(rows))

    for num, (kind, name) in FIGURES.items():
        rows = [["split", "case", "theta_p", "desired", "predicted"]]
        for r in sorted(models[kind].predictions.rows, key=lambda r: (r.split, r.theta_p)):
            if r.output == name:
                rows.append([r.split, r.case, _fmt(r.theta_p), _fmt(r.desired), _fmt(r.predicted)])
        (out / "figures" / f"fig{num}.csv").write_text(_csv(rows))

    for kind, res in models.items():
        cfg = res.sweep.config
        for split, (params, rep, run) in res.final.items():
            seed = [cfg.seed, MODEL_INDEX[kind], run.hidden, split, run.restart]
            save_checkpoint(
                out / "checkpoints" / f"model{kind}_split{split}.json",
                params,
                seed=seed,
                meta={"model": kind, "split": split, "stop_reason": rep.stop_reason, "final": rep.final.to_dict()},
            )
