"""cytogate command line: inspect, stats, gate, label, patches, train,
predict, split, eval, serve."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import bundle as bundle_mod
from . import cascade as cascade_mod
from . import classifier as classifier_mod
from . import folds as folds_mod
from . import metrics as metrics_mod
from . import patches as patches_mod
from . import stats as stats_mod


@click.group()
def main():
    """Stain gating, rule-cascade labeling and evaluation toolkit."""


@main.command()
@click.argument("bundle_path", type=click.Path(exists=True, file_okay=False))
def inspect(bundle_path):
    """Print a slide bundle's manifest."""
    b = bundle_mod.read_bundle(bundle_path)
    click.echo(json.dumps(b.manifest.to_dict(), indent=2))


@main.command()
@click.argument("bundle_path", type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(), default="-", help="CSV output path ('-' = stdout)")
@click.option("--tile-size", default=1024, show_default=True)
def stats(bundle_path, out, tile_size):
    """Compute per-instance area, centroid and channel means."""
    b = bundle_mod.read_bundle(bundle_path)
    table = stats_mod.compute_stats(b, tile_size=tile_size)
    if out == "-":
        import io

        buf = io.StringIO()
        _stats_to_stream(table, buf)
        click.echo(buf.getvalue(), nl=False)
    else:
        table.to_csv(out)
        click.echo(f"wrote {len(table)} instances to {out}")


def _stats_to_stream(table, stream):
    w = csv.writer(stream)
    w.writerow(["instance_id", "area_px", "centroid_x", "centroid_y"] + table.channels)
    for i, iid in enumerate(table.instance_ids):
        w.writerow(
            [int(iid), int(table.area_px[i]),
             float(table.centroid[i, 0]), float(table.centroid[i, 1])]
            + [float(v) for v in table.mean_intensity[i]]
        )


@main.command()
@click.argument("stats_csv", type=click.Path(exists=True))
@click.option("--thresholds", "thresholds_path", required=True,
              type=click.Path(exists=True), help="per-stain threshold JSON")
@click.option("--out", type=click.Path(), required=True, help="positivity CSV output")
def gate(stats_csv, thresholds_path, out):
    """Apply per-stain thresholds to a stats table."""
    table = stats_mod.InstanceStatsTable.from_csv(stats_csv)
    th = stats_mod.ThresholdSet.from_json(thresholds_path)
    pm = stats_mod.apply_thresholds(table, th)
    pm.to_csv(out)
    click.echo(f"gated {len(pm.instance_ids)} instances x {len(pm.stains)} stains")


@main.command()
@click.option("--rules", "rules_path", type=click.Path(exists=True), default=None,
              help="rule program file (default: shipped 31-step program)")
@click.option("--positivity", "positivity_path", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True, help="label CSV output")
def label(rules_path, positivity_path, out):
    """Run the rule cascade over a positivity matrix."""
    program = _load_program(rules_path)
    pm = stats_mod.PositivityMatrix.from_csv(positivity_path)
    assignment = cascade_mod.run_cascade(program, pm)
    assignment.to_csv(out)
    counts = assignment.class_counts()
    click.echo(json.dumps({k: v for k, v in counts.items() if v}, indent=2))


def _load_program(rules_path):
    if rules_path is None:
        return cascade_mod.load_default_program()
    return cascade_mod.parse_rule_program(Path(rules_path).read_text())


@main.command()
@click.option("--bundles", "bundle_paths", multiple=True, required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--labels", "label_csvs", multiple=True, required=True,
              type=click.Path(exists=True), help="label CSV per bundle, same order")
@click.option("--out", type=click.Path(), required=True, help="dataset directory")
def patches(bundle_paths, label_csvs, out):
    """Extract 41x41 normalized patches for labeled instances."""
    if len(bundle_paths) != len(label_csvs):
        raise click.UsageError("--bundles and --labels counts differ")
    bundles, tables, assignments = [], [], []
    for bp, lc in zip(bundle_paths, label_csvs):
        b = bundle_mod.read_bundle(bp)
        bundles.append(b)
        tables.append(stats_mod.compute_stats(b))
        assignments.append(_read_labels(lc))
    ds = patches_mod.build_dataset(bundles, tables, assignments, out)
    click.echo(json.dumps(ds.manifest.class_counts(), indent=2))


def _read_labels(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    ids = np.array([int(r["instance_id"]) for r in rows], dtype=np.uint32)
    outcomes = [cascade_mod.CellClass(r["outcome"]) for r in rows]
    steps = np.array([int(r.get("step_index", 0)) for r in rows], dtype=np.int32)
    return cascade_mod.LabelAssignment(ids, outcomes, steps)


@main.command()
@click.option("--dataset", "dataset_path", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", "model_path", required=True, type=click.Path())
@click.option("--steps", default=20000, show_default=True)
@click.option("--batch-size", default=256, show_default=True)
@click.option("--learning-rate", default=0.001, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train(dataset_path, model_path, steps, batch_size, learning_rate, seed):
    """Train the baseline softmax classifier on a patch dataset."""
    ds = patches_mod.open_dataset(dataset_path)
    cfg = classifier_mod.TrainConfig(
        steps=steps, batch_size=batch_size, learning_rate=learning_rate, seed=seed
    )
    model = classifier_mod.train(ds, cfg)
    model.save(model_path)
    click.echo(f"final loss {model.loss_trace[-1]:.4f}; model -> {model_path}")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(), help="prediction CSV")
def predict(model_path, dataset_path, out):
    """Predict classes for every patch in a dataset."""
    model = classifier_mod.SoftmaxModel.load(model_path)
    ds = patches_mod.open_dataset(dataset_path)
    x = np.stack([ds.patch(i) for i in range(len(ds))])
    labels, probs = classifier_mod.predict(model, x)
    ids = [r["instance_id"] for r in ds.manifest.records]
    classifier_mod.predictions_to_csv(out, ids, labels, probs, model.classes)
    click.echo(f"wrote {len(labels)} predictions to {out}")


@main.command()
@click.option("--cohort", "cohort_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=7, show_default=True)
@click.option("--out", type=click.Path(), default="-")
def split(cohort_path, seed, out):
    """Generate constrained patient-level 5-fold splits."""
    cohort = folds_mod.CohortTable.from_csv(cohort_path)
    plan = folds_mod.make_folds(cohort, seed)
    doc = json.dumps({"folds": plan.folds}, indent=2)
    if out == "-":
        click.echo(doc)
    else:
        Path(out).write_text(doc)
        click.echo(f"wrote fold plan to {out}")


@main.command(name="eval")
@click.option("--pred-map", required=True, type=click.Path(exists=True),
              help="predicted instance map (raw uint32)")
@click.option("--truth-map", required=True, type=click.Path(exists=True))
@click.option("--width", required=True, type=int)
@click.option("--height", required=True, type=int)
@click.option("--pred-classes", "pred_csv", required=True, type=click.Path(exists=True))
@click.option("--truth-classes", "truth_csv", required=True, type=click.Path(exists=True))
@click.option("--parents", "parents_path", default=None, type=click.Path(exists=True),
              help="subclass->parent JSON; enables bounded metrics")
@click.option("--out", required=True, type=click.Path(), help="metrics report JSON")
@click.option("--emit-csv", default=None, type=click.Path(), help="per-class CSV")
def eval_cmd(pred_map, truth_map, width, height, pred_csv, truth_csv,
             parents_path, out, emit_csv):
    """Match instances and compute detection + classification metrics."""
    shape = (height, width)
    pred = np.fromfile(pred_map, dtype="<u4").reshape(shape)
    truth = np.fromfile(truth_map, dtype="<u4").reshape(shape)
    pred_classes = _class_map(pred_csv)
    truth_classes = _class_map(truth_csv)

    det = metrics_mod.detection_pr(pred, truth)
    pairs = metrics_mod.match_instances(pred, truth)
    cm = metrics_mod.class_metrics(pairs, pred_classes, truth_classes)
    report = {
        "detection": det,
        "n_matched_pairs": len(pairs.pairs),
        "unmatched_pred": len(pairs.unmatched_pred),
        "unmatched_truth": len(pairs.unmatched_truth),
        "classes": cm.classes,
        "confusion": cm.confusion.tolist(),
        "accuracy": cm.accuracy,
        "per_class": cm.per_class,
    }
    if parents_path:
        pmap = json.loads(Path(parents_path).read_text())
        bounded = metrics_mod.bounded_metrics(pairs, pred_classes, truth_classes, pmap)
        report["bounded"] = bounded.per_subclass
    Path(out).write_text(json.dumps(report, indent=2))
    if emit_csv:
        with open(emit_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["class", "tp", "fp", "tn", "fn", "ppv", "npv",
                        "prevalence", "prevalence_normalized_ppv"])
            for c in cm.classes:
                d = cm.per_class[c]
                w.writerow([c, d["tp"], d["fp"], d["tn"], d["fn"], d["ppv"],
                            d["npv"], d["prevalence"], d["prevalence_normalized_ppv"]])
    click.echo(f"accuracy {cm.accuracy:.4f} over {cm.n_pairs} matched pairs")


def _class_map(path):
    with open(path, newline="") as f:
        return {int(r["instance_id"]): r["class"] for r in csv.DictReader(f)}


@main.command()
@click.option("--root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--rules", "rules_path", default=None, type=click.Path(exists=True))
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--static", "static_dir", default=None,
              type=click.Path(exists=True, file_okay=False),
              help="directory of built UI assets to serve at /")
def serve(root, rules_path, port, host, static_dir):
    """Run the interactive threshold-tuning HTTP service."""
    import uvicorn

    from .service import create_app

    program = _load_program(rules_path)
    app = create_app(root, program, Path(static_dir) if static_dir else None)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
