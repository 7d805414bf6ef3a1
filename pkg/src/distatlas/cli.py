"""Command-line surface of the pipeline.

Commands: generate (corpus cache + manifest), train (classifier or
autoencoder checkpoints + history CSVs), map (latent exports: points,
density, WOE, segments, class map, trajectories, associations,
generated curves), describe (per-column metadata records for a CSV),
eval (confusion report), grad-check (finite-difference audit).

Every command is reproducible from its flags and seed; each run
appends its invocation to run_log.jsonl in the output directory.
Figure-style results are emitted as data files, never rendered.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, betavae, cdfrepair, classifier, distgen, latentlab
from .cdfcodec import GridShape, encode_cdf, signed_ks
from .neuralcore import (
    DenseNet,
    ShapeMismatchError,
    TrainConfig,
    TrainingDivergedError,
    grad_check,
    one_hot,
    split_indices,
)

# tokens treated as missing cells when parsing input CSVs
MISSING_TOKENS = {"", "na", "n/a", "nan", "null", "none"}

EXIT_BAD_SPEC = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_DIVERGED = 4
EXIT_MISMATCH = 5
EXIT_BAD_INPUT = 6

GRAD_CHECK_TOLERANCE = 1e-4

METADATA_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "variable metadata record",
    "type": "object",
    "required": ["name", "n_values", "n_missing", "low_confidence", "z", "sigma",
                 "predicted_family", "predicted_family_id", "probabilities",
                 "entropy", "skewness", "ks_uniform", "segment"],
    "properties": {
        "name": {"type": "string"},
        "n_values": {"type": "integer", "minimum": 2},
        "n_missing": {"type": "integer", "minimum": 0},
        "low_confidence": {"type": "boolean"},
        "z": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2},
        "sigma": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2},
        "predicted_family": {"type": "string"},
        "predicted_family_id": {"type": "integer", "minimum": 0, "maximum": 12},
        "probabilities": {
            "type": "object",
            "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "entropy": {"type": "number", "minimum": 0, "maximum": 1},
        "skewness": {"type": "number", "minimum": -1, "maximum": 1},
        "ks_uniform": {"type": "number", "minimum": 0, "maximum": 1},
        "segment": {"type": "string"},
    },
}


class CliError(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log_invocation(out: Path, command: str, argv) -> None:
    record = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "utc": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    with open(out / "run_log.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([str(v) for v in row])


def _parse_grid(text: str) -> GridShape:
    try:
        xs, ys = text.lower().split("x")
        return GridShape(int(xs), int(ys))
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_BAD_SPEC, f"bad --grid {text!r}; expected like 26x25") from exc


def _load_dataset(path: str) -> distgen.LabeledDataset:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING_ARTIFACT, f"dataset cache not found: {p}")
    try:
        return distgen.load_cache(p)
    except ValueError as exc:
        raise CliError(EXIT_MISSING_ARTIFACT, f"unreadable dataset cache: {exc}") from exc


def _load_vae(path: str):
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING_ARTIFACT, f"autoencoder checkpoint not found: {p}")
    try:
        return betavae.load_vae(p)
    except ValueError as exc:
        raise CliError(EXIT_MISSING_ARTIFACT, str(exc)) from exc


def _load_classifier(path: str):
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING_ARTIFACT, f"classifier checkpoint not found: {p}")
    try:
        return classifier.load_classifier(p)
    except ValueError as exc:
        raise CliError(EXIT_MISSING_ARTIFACT, str(exc)) from exc


# ---------------------------------------------------------------------------
# generate

def cmd_generate(args, argv) -> int:
    if args.spec:
        spec_path = Path(args.spec)
        if not spec_path.exists():
            raise CliError(EXIT_BAD_SPEC, f"spec file not found: {spec_path}")
        try:
            with open(spec_path, encoding="utf-8") as fh:
                spec_obj = json.load(fh)
            master_seed, per_family, grid = distgen.parse_dataset_spec(spec_obj)
        except (json.JSONDecodeError, ValueError) as exc:
            raise CliError(EXIT_BAD_SPEC, f"malformed dataset spec: {exc}") from exc
    else:
        master_seed = args.seed
        per_family = args.per_family
        grid = _parse_grid(args.grid)
        if per_family < 1:
            raise CliError(EXIT_BAD_SPEC, "--per-family must be >= 1")

    out = _out_dir(args)
    _log_invocation(out, "generate", argv)
    dataset = distgen.build_doe(per_family, grid, master_seed)
    cache_path = out / "dataset.bin"
    distgen.save_cache(dataset, cache_path)

    spec_obj = {"master_seed": master_seed, "per_family_count": per_family,
                "grid": {"x_bins": grid.x_bins, "y_levels": grid.y_levels}}
    _write_json(out / "dataset_spec.json", spec_obj)

    digest = hashlib.sha256(cache_path.read_bytes()).hexdigest()
    per_family_stats = []
    for fid in range(distgen.N_FAMILIES):
        mask = dataset.labels == fid
        per_family_stats.append({
            "family_id": fid,
            "name": distgen.FAMILY_NAMES[fid],
            "count": int(mask.sum()),
            "mean_entropy": round(float(dataset.entropy[mask].mean()), 6),
            "mean_skewness": round(float(dataset.skewness[mask].mean()), 6),
            "mean_ks_uniform": round(float(dataset.ks_uniform[mask].mean()), 6),
            "mean_sample_size": round(float(dataset.sample_sizes[mask].mean()), 2),
        })
    manifest = {
        "kind": "cdf-dataset-manifest",
        "version": 1,
        "n_entries": len(dataset),
        "n_families": distgen.N_FAMILIES,
        "per_family_count": per_family,
        "master_seed": master_seed,
        "grid": {"x_bins": grid.x_bins, "y_levels": grid.y_levels},
        "sample_size_range": [distgen.MIN_SAMPLE_SIZE, distgen.MAX_SAMPLE_SIZE],
        "cache_file": cache_path.name,
        "cache_bytes": cache_path.stat().st_size,
        "cache_sha256": digest,
        "per_family": per_family_stats,
    }
    _write_json(out / "dataset_manifest.json", manifest)
    print(f"generated {len(dataset)} entries -> {cache_path}")
    return 0


# ---------------------------------------------------------------------------
# train

def _train_config_from_args(args, default_epochs: int) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=args.epochs if args.epochs is not None else default_epochs,
            batch_size=args.batch_size,
            learning_rate=args.learning_rate,
            rho=args.rho,
            epsilon=args.epsilon,
            optimizer=args.optimizer,
            rng_seed=args.seed,
        )
    except ValueError as exc:
        raise CliError(EXIT_BAD_SPEC, f"bad training config: {exc}") from exc


def cmd_train(args, argv) -> int:
    dataset = _load_dataset(args.dataset)
    out = _out_dir(args)
    _log_invocation(out, "train", argv)
    if args.model == "classifier":
        config = _train_config_from_args(args, default_epochs=50)
        model, history = classifier.train_classifier(dataset, config)
        ckpt = out / "classifier.ckpt"
        classifier.save_classifier(ckpt, model, config)
        _write_csv(out / "classifier_history.csv",
                   ["epoch", "train_loss", "test_accuracy"],
                   [(h.epoch, h.train_loss, h.test_accuracy) for h in history])
        print(f"classifier test accuracy {history[-1].test_accuracy:.4f} -> {ckpt}")
    else:
        config = _train_config_from_args(args, default_epochs=100)
        model, history = betavae.train_bvae(dataset, beta=args.beta,
                                            latent_dim=args.latent_dim, config=config)
        ckpt = out / "bvae.ckpt"
        betavae.save_vae(ckpt, model, config)
        _write_csv(out / "bvae_history.csv",
                   ["epoch", "train_loss", "train_bce", "train_kl", "test_bce", "test_kl"],
                   [(h.epoch, h.train_loss, h.train_bce, h.train_kl, h.test_bce, h.test_kl)
                    for h in history])
        print(f"autoencoder test bce {history[-1].test_bce:.3f} "
              f"(epoch 0: {history[0].test_bce:.3f}) -> {ckpt}")
    return 0


# ---------------------------------------------------------------------------
# map

def _lattice_rows(field, values, extra_cols=()):
    """Yield CSV rows over a 1D or 2D lattice of cell centers."""
    if field.density.ndim == 1:
        cx = field.centers(0)
        for i in range(cx.shape[0]):
            yield (i, cx[i], *(col[i] for col in (values, *extra_cols)))
    else:
        cx = field.centers(0)
        cy = field.centers(1)
        for i in range(cx.shape[0]):
            for j in range(cy.shape[0]):
                yield (i, j, cx[i], cy[j], *(col[i, j] for col in (values, *extra_cols)))


def cmd_map(args, argv) -> int:
    model, _header = _load_vae(args.vae)
    dataset = _load_dataset(args.dataset)
    if dataset.grid_shape != model.grid_shape:
        raise CliError(EXIT_MISMATCH,
                       f"checkpoint grid {model.grid_shape} != dataset grid {dataset.grid_shape}")
    out = _out_dir(args)
    _log_invocation(out, "map", argv)

    points = betavae.encode_dataset(model, dataset)
    d = model.latent_dim
    z_cols = [f"z{j + 1}" for j in range(d)]
    s_cols = [f"sigma{j + 1}" for j in range(d)]
    _write_csv(out / "latent_points.csv",
               z_cols + s_cols + ["family_id", "entropy", "skewness", "ks_uniform"],
               ((*points.z[i], *points.sigma[i], points.labels[i], points.entropy[i],
                 points.skewness[i], points.ks_uniform[i]) for i in range(len(points))))

    bounds = betavae.default_latent_bounds(points.z)
    field = latentlab.estimate_density(points.z, resolution=args.density_resolution,
                                       bounds=bounds)
    woe = latentlab.segment(latentlab.woe_map(field), w_star=args.w_star, p_min=args.p_min)
    if d == 1:
        lattice_header = ["x_index", "x_center"]
    else:
        lattice_header = ["x_index", "y_index", "x_center", "y_center"]
    _write_csv(out / "density.csv", lattice_header + ["density"],
               _lattice_rows(field, field.density))
    _write_csv(out / "woe.csv", lattice_header + ["density", "woe"],
               _lattice_rows(woe, woe.density, (woe.woe,)))
    seg_names = np.empty(woe.segments.shape, dtype=object)
    it = np.nditer(woe.segments, flags=["multi_index"])
    for _ in it:
        seg_names[it.multi_index] = woe.segment_name(it.multi_index)
    _write_csv(out / "segments.csv", lattice_header + ["density", "woe", "segment"],
               _lattice_rows(woe, woe.density, (woe.woe, seg_names)))

    trajs = latentlab.trajectories(points, n_entropy_bins=args.trajectory_bins,
                                   min_count=args.trajectory_min_count)
    _write_json(out / "trajectories.json", [
        {
            "family_id": t.family_id,
            "family": distgen.FAMILY_NAMES[t.family_id],
            "branch": t.branch,
            "waypoints": [
                {"entropy": w.entropy, "z": [float(v) for v in np.atleast_1d(w.z)],
                 "count": w.count, "spread": w.spread}
                for w in t.waypoints
            ],
        }
        for t in trajs
    ])

    latent_config = classifier.default_latent_train_config(
        epochs=args.latent_epochs, seed=distgen.mix64(args.seed, 21))
    latent_model, latent_history = classifier.train_latent_classifier(points, latent_config)
    classifier.save_classifier(out / "latent_classifier.ckpt", latent_model, latent_config)
    cmap = latentlab.class_map(latent_model, bounds, resolution=args.class_map_resolution)
    lattice = betavae.latent_lattice(bounds, args.class_map_resolution)
    rows = []
    if d == 1:
        for i in range(args.class_map_resolution):
            fid = int(cmap[i])
            rows.append((i, lattice[i, 0], fid, distgen.FAMILY_NAMES[fid]))
        _write_csv(out / "class_map.csv", ["x_index", "z1", "family_id", "family"], rows)
    else:
        r = args.class_map_resolution
        for i in range(r):
            for j in range(r):
                fid = int(cmap[i, j])
                rows.append((i, j, lattice[i * r + j, 0], lattice[i * r + j, 1],
                             fid, distgen.FAMILY_NAMES[fid]))
        _write_csv(out / "class_map.csv",
                   ["x_index", "y_index", "z1", "z2", "family_id", "family"], rows)

    overlap = latentlab.overlap_matrix(points)
    _write_csv(out / "overlap_matrix.csv", ["family"] + distgen.FAMILY_NAMES,
               [(distgen.FAMILY_NAMES[i], *overlap[i]) for i in range(distgen.N_FAMILIES)])

    lattice_z, decoded = betavae.generate_latent_grid(model, bounds,
                                                      resolution=args.curve_resolution)
    shape = model.grid_shape
    curve_rows = []
    for k in range(lattice_z.shape[0]):
        cells = decoded[k].reshape(shape.x_bins, shape.y_levels)
        raw = cdfrepair.grid_to_curve(cells)
        fixed = cdfrepair.monotone_repair(raw)
        coords = lattice_z[k]
        for b in range(shape.x_bins):
            center = (b + 0.5) / shape.x_bins
            curve_rows.append((k, *coords, b, center, raw[b], fixed[b]))
    _write_csv(out / "generated_curves.csv",
               ["point_index"] + z_cols + ["bin", "bin_center", "raw_level", "repaired_level"],
               curve_rows)

    print(f"mapped {len(points)} points; latent classifier test accuracy "
          f"{latent_history[-1].test_accuracy:.4f}; exports in {out}")
    return 0


# ---------------------------------------------------------------------------
# describe

def _read_numeric_columns(path: Path):
    """Parse a wide CSV into {column: float array}; count missing cells."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CliError(EXIT_BAD_INPUT, f"{path}: empty file") from None
        columns = [[] for _ in header]
        for row in reader:
            for i in range(len(header)):
                columns[i].append(row[i] if i < len(row) else "")
    parsed = {}
    for name, raw in zip(header, columns):
        values = []
        missing = 0
        numeric_failures = 0
        for cell in raw:
            text = cell.strip()
            if text.lower() in MISSING_TOKENS:
                missing += 1
                continue
            try:
                value = float(text)
            except ValueError:
                numeric_failures += 1
                continue
            if np.isfinite(value):
                values.append(value)
            else:
                missing += 1
        # a column is numeric when every non-missing cell parses
        if numeric_failures == 0 and len(values) >= 2:
            parsed[name] = (np.array(values, dtype=np.float64), missing)
    return parsed


def _segments_lookup(path: Path):
    """Load a segments.csv lattice into a cell-label lookup function."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise CliError(EXIT_MISSING_ARTIFACT, f"{path}: empty segments file")
    two_d = "y_index" in rows[0]
    xs = sorted({float(r["x_center"]) for r in rows})
    x_centers = np.array(xs)
    if two_d:
        ys = sorted({float(r["y_center"]) for r in rows})
        y_centers = np.array(ys)
        labels = {}
        for r in rows:
            labels[(int(r["x_index"]), int(r["y_index"]))] = r["segment"]
    else:
        y_centers = None
        labels = {int(r["x_index"]): r["segment"] for r in rows}

    def nearest(centers: np.ndarray, value: float):
        step = centers[1] - centers[0] if centers.shape[0] > 1 else 1.0
        if value < centers[0] - 0.5 * step or value > centers[-1] + 0.5 * step:
            return None
        return int(np.argmin(np.abs(centers - value)))

    def lookup(z: np.ndarray) -> str:
        i = nearest(x_centers, float(z[0]))
        if i is None:
            return "common"
        if y_centers is None:
            return labels.get(i, "common")
        j = nearest(y_centers, float(z[1]))
        if j is None:
            return "common"
        return labels.get((i, j), "common")

    return lookup


def cmd_describe(args, argv) -> int:
    grid_model, _ = _load_classifier(args.classifier)
    if not isinstance(grid_model, classifier.GridClassifier):
        raise CliError(EXIT_MISMATCH, "--classifier must be a grid-input checkpoint")
    vae_model, _ = _load_vae(args.vae)
    if grid_model.grid_shape != vae_model.grid_shape:
        raise CliError(EXIT_MISMATCH, "classifier and autoencoder grids differ")
    lookup = _segments_lookup(Path(args.segments)) if args.segments else None
    data_path = Path(args.data)
    if not data_path.exists():
        raise CliError(EXIT_BAD_INPUT, f"input csv not found: {data_path}")
    columns = _read_numeric_columns(data_path)
    if not columns:
        raise CliError(EXIT_BAD_INPUT, f"{data_path}: no numeric columns to describe")

    out = _out_dir(args)
    _log_invocation(out, "describe", argv)
    shape = grid_model.grid_shape
    records = []
    for name, (values, missing) in columns.items():
        grid = encode_cdf(values, shape)
        stats = signed_ks(values, n_bins=shape.x_bins)
        probs = classifier.predict(grid_model, grid)
        mu, sigma = vae_model.encode(grid.flat()[None, :])
        fid = int(np.argmax(probs))
        records.append({
            "name": name,
            "n_values": int(values.shape[0]),
            "n_missing": int(missing),
            "low_confidence": bool(values.shape[0] < distgen.MIN_SAMPLE_SIZE),
            "z": [round(float(v), 6) for v in mu[0]],
            "sigma": [round(float(v), 6) for v in sigma[0]],
            "predicted_family": distgen.FAMILY_NAMES[fid],
            "predicted_family_id": fid,
            "probabilities": {distgen.FAMILY_NAMES[i]: round(float(probs[i]), 6)
                              for i in range(distgen.N_FAMILIES)},
            "entropy": round(stats.entropy, 6),
            "skewness": round(stats.skewness, 6),
            "ks_uniform": round(stats.ks_uniform, 6),
            "segment": lookup(mu[0]) if lookup else "common",
        })
    target = Path(args.out) if args.out else out / "metadata.jsonl"
    with open(target, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"described {len(records)} columns -> {target}")
    return 0


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args, argv) -> int:
    model, header = _load_classifier(args.classifier)
    if not isinstance(model, classifier.GridClassifier):
        raise CliError(EXIT_MISMATCH, "--classifier must be a grid-input checkpoint")
    dataset = _load_dataset(args.dataset)
    if dataset.grid_shape != model.grid_shape:
        raise CliError(EXIT_MISMATCH,
                       f"checkpoint grid {model.grid_shape} != dataset grid {dataset.grid_shape}")
    out = _out_dir(args)
    _log_invocation(out, "eval", argv)
    config = header.get("train_config") or {}
    split_seed = int(config.get("rng_seed", args.seed))
    _, test_idx = split_indices(len(dataset), split_seed)
    matrix = classifier.evaluate(model, dataset.grids[test_idx], dataset.labels[test_idx])
    report = {
        "overall_accuracy": round(matrix.overall_accuracy, 6),
        "simpler_confusion_rate": round(matrix.simpler_confusion_rate, 6),
        "more_complex_confusion_rate": round(matrix.more_complex_confusion_rate, 6),
        "split_seed": split_seed,
        "n_test": int(test_idx.shape[0]),
        "per_class": [
            {"family_id": i, "family": distgen.FAMILY_NAMES[i],
             "count": int(matrix.row_totals[i]),
             "recall": None if np.isnan(matrix.per_class_recall[i])
             else round(float(matrix.per_class_recall[i]), 6)}
            for i in range(distgen.N_FAMILIES)
        ],
        "matrix": matrix.counts.tolist(),
    }
    _write_json(out / "eval_report.json", report)
    _write_csv(out / "confusion_matrix.csv", ["family"] + distgen.FAMILY_NAMES,
               [(distgen.FAMILY_NAMES[i], *matrix.counts[i]) for i in range(distgen.N_FAMILIES)])
    print(f"test accuracy {matrix.overall_accuracy:.4f} over {test_idx.shape[0]} entries")
    return 0


# ---------------------------------------------------------------------------
# grad-check

def cmd_grad_check(args, argv) -> int:
    out = _out_dir(args)
    _log_invocation(out, "grad-check", argv)
    grid = _parse_grid(args.grid)
    rng = np.random.default_rng(args.seed)
    batch = rng.random((16, grid.n_cells))
    worst = {}
    if args.arch in ("classifier", "both"):
        net = DenseNet(classifier.grid_classifier_layers(grid.n_cells),
                       seed=distgen.mix64(args.seed, 1))
        targets = one_hot(rng.integers(0, distgen.N_FAMILIES, size=16), distgen.N_FAMILIES)
        worst["classifier"] = grad_check(net, batch, targets, loss="cce", seed=args.seed)
    if args.arch in ("bvae", "both"):
        model = betavae.VaeModel(grid, beta=3.0, latent_dim=args.latent_dim,
                                 seed=distgen.mix64(args.seed, 2))
        eps = rng.standard_normal((16, args.latent_dim))
        worst["bvae"] = betavae.vae_grad_check(model, batch, eps, seed=args.seed)
    failed = False
    for name, err in worst.items():
        ok = err < GRAD_CHECK_TOLERANCE
        failed |= not ok
        print(f"{name}: max relative error {err:.3e} "
              f"({'ok' if ok else 'EXCEEDS ' + str(GRAD_CHECK_TOLERANCE)})")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distatlas",
        description="CDF grid corpus generation, model training, and latent-space analysis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--grid", default="26x25", help="grid as XxY (default 26x25)")
    common.add_argument("--out-dir", default="out", help="output directory (default ./out)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="build the corpus cache")
    p.add_argument("--spec", help="dataset spec JSON (overrides the flags)")
    p.add_argument("--per-family", type=int, default=1000,
                   help="variables per family (default 1000)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("model", choices=["classifier", "bvae"])
    p.add_argument("--dataset", default="out/dataset.bin")
    p.add_argument("--epochs", type=int, default=None,
                   help="default 50 for classifier, 100 for bvae")
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--optimizer", choices=["rmsprop", "adadelta"], default="rmsprop")
    p.add_argument("--beta", type=float, default=3.0)
    p.add_argument("--latent-dim", type=int, choices=[1, 2], default=2)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("map", parents=[common], help="latent-space exports")
    p.add_argument("--vae", default="out/bvae.ckpt")
    p.add_argument("--dataset", default="out/dataset.bin")
    p.add_argument("--w-star", type=float, default=latentlab.DEFAULT_W_STAR)
    p.add_argument("--p-min", type=float, default=latentlab.DEFAULT_P_MIN)
    p.add_argument("--density-resolution", type=int, default=latentlab.DEFAULT_DENSITY_RESOLUTION)
    p.add_argument("--class-map-resolution", "--resolution", dest="class_map_resolution",
                   type=int, default=75)
    p.add_argument("--curve-resolution", type=int, default=50)
    p.add_argument("--latent-epochs", type=int, default=40)
    p.add_argument("--trajectory-bins", type=int, default=20)
    p.add_argument("--trajectory-min-count", type=int, default=20)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("describe", parents=[common],
                       help="emit metadata records for a CSV's numeric columns")
    p.add_argument("--data", required=True, help="wide-format CSV with a header row")
    p.add_argument("--classifier", default="out/classifier.ckpt")
    p.add_argument("--vae", default="out/bvae.ckpt")
    p.add_argument("--segments", default=None,
                   help="segments.csv from the map command; omitted -> all common")
    p.add_argument("--out", default=None, help="output JSONL (default out-dir/metadata.jsonl)")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("eval", parents=[common], help="held-out confusion report")
    p.add_argument("--classifier", default="out/classifier.ckpt")
    p.add_argument("--dataset", default="out/dataset.bin")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", parents=[common],
                       help="finite-difference audit of the gradients")
    p.add_argument("--arch", choices=["classifier", "bvae", "both"], default="both")
    p.add_argument("--latent-dim", type=int, choices=[1, 2], default=2)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ShapeMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
