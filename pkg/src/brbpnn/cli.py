"""Command-line front end.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage error.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from brbpnn import data as data_mod
from brbpnn.data import DataError, Normalizer, build_pairs, fold_plan, get_model, load_dataset
from brbpnn.evaluate import (
    StageError,
    SweepConfig,
    derive_seed,
    predict_and_report,
    reproduce,
    run_sweep,
)
from brbpnn.network import NetworkSpec, load_checkpoint, predict, save_checkpoint
from brbpnn.trainer import HyperparameterError, TrainConfig, TrainingDiverged, train

OUT_ENV = "BRBPNN_OUT"


def _fail(msg: str) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(1)


def _records(path):
    try:
        return load_dataset(path)
    except DataError as exc:
        _fail(str(exc))


def _parse_hidden(ctx, param, value: str) -> tuple[int, ...]:
    try:
        if "-" in value:
            lo, hi = (int(x) for x in value.split("-"))
            sizes = tuple(range(lo, hi + 1))
        else:
            sizes = tuple(int(x) for x in value.split(","))
    except ValueError:
        raise click.BadParameter(f"expected a range like 1-10 or a list like 1,2,5; got {value!r}")
    if not sizes or min(sizes) < 1:
        raise click.BadParameter("hidden sizes must be positive")
    return sizes


def _parse_split(ctx, param, value: str):
    if value == "all":
        return (1, 2, 3, 4, 5)
    try:
        n = int(value)
    except ValueError:
        raise click.BadParameter("split must be 1-5 or 'all'")
    if not 1 <= n <= 5:
        raise click.BadParameter("split must be 1-5 or 'all'")
    return (n,)


model_opt = click.option("--model", "model_kind", type=click.Choice(["I", "II"]), default="I", show_default=True)
seed_opt = click.option("--seed", type=int, default=0, show_default=True, help="Master seed.")
epochs_opt = click.option("--epochs", type=click.IntRange(min=1), default=2000, show_default=True)
act_opt = click.option(
    "--activation", type=click.Choice(["tanh", "linear"]), default="tanh", show_default=True,
    help="Hidden-layer activation; input and output layers are linear.",
)
data_opt = click.option("--data", "data_path", type=click.Path(dir_okay=False), default=None,
                        help="CSV dataset (default: embedded FE table).")
out_opt = click.option("--out", "out_dir", type=click.Path(file_okay=False), envvar=OUT_ENV,
                       default="brbpnn-out", show_default=True, help=f"Output directory (env {OUT_ENV}).")


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Bayesian-regularized LM training for spatula peeling predictions."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command("validate-data")
@data_opt
@click.option("--no-checksum", is_flag=True, help="Skip comparison with the canonical table checksum.")
def validate_data(data_path, no_checksum):
    """Check row count, angle ordering, fold partition and checksum."""
    records = _records(data_path)
    checks = []

    def check(name, ok, detail=""):
        checks.append(name)
        if not ok:
            _fail(f"check {name!r} failed{': ' + detail if detail else ''}")
        click.echo(f"ok    {name}")

    check("row count", len(records) == data_mod.CANONICAL_SIZE, f"{len(records)} rows, expected {data_mod.CANONICAL_SIZE}")
    check("case ids", [r.case for r in records] == list(range(1, len(records) + 1)))
    thetas = [r.theta_p for r in records]
    check("theta_p increasing", all(a < b for a, b in zip(thetas, thetas[1:])))
    check("positive responses", all(r.value(c) > 0 for r in records for c in data_mod.NUMERIC_COLUMNS))
    try:
        data_mod.check_partition(fold_plan())
        check("fold partition", True)
    except DataError as exc:
        check("fold partition", False, str(exc))
    digest = data_mod.dataset_checksum(records)
    click.echo(f"sha256 {digest}")
    if not no_checksum:
        check("checksum", digest == data_mod.CANONICAL_SHA256, f"expected {data_mod.CANONICAL_SHA256}")
    click.echo(f"pass: {len(records)} rows")


@main.command("train")
@model_opt
@click.option("--spec", "spec_text", default=None, help="Structure like 1-5-3 (default: the model's recommended one).")
@click.option("--split", "splits", default="1", callback=_parse_split, show_default=True, help="1-5 or all.")
@click.option("--restart", type=click.IntRange(min=0), default=0, show_default=True)
@seed_opt
@epochs_opt
@act_opt
@data_opt
@out_opt
def train_cmd(model_kind, spec_text, splits, restart, seed, epochs, activation, data_path, out_dir):
    """Train one network per split and write report + checkpoint JSON."""
    choice = get_model(model_kind)
    try:
        spec = NetworkSpec.parse(spec_text or choice.structure, hidden=activation)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--spec")
    if spec.layer_sizes[0] != 1 or spec.output_dim != choice.n_outputs or spec.n_layers != 3:
        raise click.BadParameter(
            f"model {choice.kind} needs a structure 1-N-{choice.n_outputs}", param_hint="--spec"
        )
    records = _records(data_path)
    norm = Normalizer.fit(records)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(max_epochs=epochs, seed=seed)
    hidden = spec.layer_sizes[1]
    failed = False
    for split in splits:
        u, t = build_pairs(records, choice, fold_plan()[split].train, norm)
        rng = np.random.default_rng(derive_seed(seed, choice.kind, hidden, split, restart))
        stem = f"model{choice.kind}_{spec.label()}_split{split}_seed{seed}"
        try:
            params, rep = train(spec, u, t, cfg, rng=rng)
        except (TrainingDiverged, HyperparameterError) as exc:
            state = getattr(exc, "state", None)
            partial = {"error": str(exc), "last_state": state.to_dict() if state else None}
            (out / f"{stem}.report.json").write_text(json.dumps(partial, indent=1, sort_keys=True) + "\n")
            click.echo(f"split {split}: training failed: {exc}", err=True)
            failed = True
            continue
        (out / f"{stem}.report.json").write_text(rep.to_json())
        save_checkpoint(
            out / f"{stem}.ckpt.json", params,
            seed=[seed, 1 if choice.kind == "I" else 2, hidden, split, restart],
            meta={"model": choice.kind, "split": split},
        )
        f = rep.final
        click.echo(
            f"split {split}: {rep.stop_reason} after {f.epoch} epochs  mse={f.mse:.3e} "
            f"ssw={f.ssw:.2f} gamma={f.gamma:.2f}/{f.K} lambda={f.lam:.1e} grad={f.grad_norm:.2e}"
        )
    if failed:
        sys.exit(1)


@main.command("sweep")
@model_opt
@click.option("--hidden", default="1-10", callback=_parse_hidden, show_default=True)
@click.option("--restarts", type=click.IntRange(min=1), default=15, show_default=True)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@seed_opt
@epochs_opt
@act_opt
@data_opt
@out_opt
def sweep_cmd(model_kind, hidden, restarts, jobs, seed, epochs, activation, data_path, out_dir):
    """Mean test MSE versus hidden-layer size over 5 folds and restarts."""
    choice = get_model(model_kind)
    records = _records(data_path)
    cfg = SweepConfig(choice, hidden, restarts, TrainConfig(max_epochs=epochs), seed, activation, jobs=jobs)
    try:
        rep = run_sweep(cfg, records)
    except ValueError as exc:
        _fail(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"sweep_model{choice.kind}.json").write_text(json.dumps(rep.to_dict(), sort_keys=True) + "\n")
    click.echo("hidden  mean_test_mse  runs")
    for h in hidden:
        click.echo(f"{h:6d}  {rep.curve[h]:.4e}  {rep.counts[h]:4d}")
    click.echo(f"selected: {cfg.spec(rep.selected).label()}  (failed runs: {rep.failures})")


@main.command("predict")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", "model_kind", type=click.Choice(["I", "II"]), default=None, help="Default: from checkpoint.")
@click.option("--split", type=click.IntRange(1, 5), default=None, help="Default: from checkpoint.")
@click.option("--theta", type=float, multiple=True, help="Predict at these peeling angles [deg] instead.")
@data_opt
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of a table.")
def predict_cmd(checkpoint, model_kind, split, theta, data_path, as_json):
    """Predict with a saved checkpoint on a split's test fold or given angles."""
    try:
        params, meta = load_checkpoint(checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        _fail(f"cannot load checkpoint: {exc}")
    kind = model_kind or meta.get("model")
    if kind is None:
        raise click.UsageError("checkpoint has no model tag; pass --model")
    choice = get_model(kind)
    if params.spec.output_dim != choice.n_outputs:
        raise click.UsageError(f"checkpoint has {params.spec.output_dim} outputs, model {kind} needs {choice.n_outputs}")
    records = _records(data_path)
    if theta:
        norm = Normalizer.fit(records)
        u = norm.apply(np.array(theta)[:, None], ("theta_p",))
        pred = norm.invert(predict(params, u), choice.outputs)
        rows = [dict(theta_p=th, **{o: float(v) for o, v in zip(choice.outputs, p)}) for th, p in zip(theta, pred)]
        if as_json:
            click.echo(json.dumps(rows, indent=1))
        else:
            click.echo("theta_p  " + "  ".join(f"{o:>12s}" for o in choice.outputs))
            for r in rows:
                click.echo(f"{r['theta_p']:7.2f}  " + "  ".join(f"{r[o]:12.5f}" for o in choice.outputs))
        return
    split = split or meta.get("split")
    if split is None:
        raise click.UsageError("checkpoint has no split tag; pass --split or --theta")
    rep = predict_and_report(params, choice, int(split), records)
    if as_json:
        doc = {"model": kind, "split": split, "rows": [dict(vars(r), re_pct=r.re_pct) for r in rep.rows], "stats": rep.stats()}
        click.echo(json.dumps(doc, indent=1))
        return
    click.echo(f"{'case':>4s} {'theta_p':>7s} {'output':>10s} {'desired':>12s} {'predicted':>12s} {'RE%':>8s}")
    for r in rep.rows:
        click.echo(f"{r.case:4d} {r.theta_p:7.1f} {r.output:>10s} {r.desired:12.5f} {r.predicted:12.5f} {r.re_pct:8.3f}")
    for name, s in rep.stats().items():
        click.echo(f"{name}: max {s['max']:.3f}%  min {s['min']:.4f}%  avg {s['avg']:.3f}%")


@main.command("reproduce")
@seed_opt
@click.option("--restarts", type=click.IntRange(min=1), default=15, show_default=True)
@click.option("--hidden", default="1-10", callback=_parse_hidden, show_default=True)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@epochs_opt
@act_opt
@data_opt
@out_opt
def reproduce_cmd(seed, restarts, hidden, jobs, epochs, activation, data_path, out_dir):
    """Run the whole workflow for both models and write the result bundle."""
    records = _records(data_path)
    try:
        res = reproduce(
            out_dir, seed=seed, restarts=restarts, hidden_sizes=hidden, jobs=jobs,
            train_config=TrainConfig(max_epochs=epochs), hidden_activation=activation,
            records=records, progress=lambda m: click.echo(m, err=True),
        )
    except StageError as exc:
        _fail(f"stage {exc.stage!r} failed: {exc.cause}")
    for kind, m in res.models.items():
        cfg = m.sweep.config
        click.echo(f"model {kind}: selected {cfg.spec(m.sweep.selected).label()}")
    click.echo("")
    click.echo(f"{'output':>10s} {'avg RE%':>8s} {'max RE%':>8s} {'ref avg':>9s} {'ref max':>9s}  band")
    for row in res.summary():
        band = f"avg<={row['avg_limit']}" + (f", max<={row['max_limit']}" if row["max_limit"] else "")
        verdict = "PASS" if row["pass"] else "FAIL"
        click.echo(
            f"{row['output']:>10s} {row['avg']:8.3f} {row['max']:8.3f} {row['ref_avg']:9.2f} "
            f"{row['ref_max']:9.2f}  {verdict} ({band})"
        )
    click.echo(f"\nbundle {res.out_dir}  sha256 {res.digest}")


if __name__ == "__main__":
    main()
