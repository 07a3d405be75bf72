"""The end-to-end steps behind the command line: ingest, train, fit the
transform, classify the test split and evaluate.

Every step reads its inputs from and writes its outputs to ``out_dir``:

    features/<record>.csv   manifest.json        (ingest)
    model.json                                   (train)
    transform.json  transform_diagnostics.json   (transform-fit)
    alarms/<record>.csv                          (classify)
    report/                                      (evaluate)
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evaluation, svgplot
from .classifier import (
    ABNORMAL,
    CLASSES,
    BasisSpace,
    DeterministicSpace,
    GlobalModel,
    IdentitySpace,
    StreamResult,
    classify_global_many,
    process_stream,
    write_alarm_csv,
)
from .config import PipelineConfig
from .features import (
    FeatureError,
    FeatureSample,
    PcaModel,
    apply_pca,
    extract_features,
    fit_pca,
    read_feature_csv,
    write_feature_csv,
)
from .geometry import (
    apply_transform,
    build_frame,
    build_transform,
    cosine_distance,
    transform_to_dict,
)
from .signal_prep import delineate, denoise, segment
from .swarm import (
    BasisTransform,
    ObjectiveEvaluator,
    identity_coefficients,
    linear_basis,
    mopso,
    polynomial_basis,
    select_operating_point,
)
from .wfdb_io import load_record

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    """Missing, stale or unusable input data."""


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _write(path: Path, text: str) -> str:
    evaluation.atomic_write(path, text)
    return sha256_text(text)


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# Ingest
# --------------------------------------------------------------------------

@dataclass
class IngestResult:
    name: str
    rows: np.ndarray
    meta: list[tuple]
    counts: Counter = field(default_factory=Counter)
    discarded: int = 0
    feature_errors: int = 0


def ingest_record(path: str | Path, config: PipelineConfig) -> IngestResult:
    """Record file -> raw feature rows of its non-discarded segments."""
    rec = load_record(path, config.channel, config.annotation_ext, config.aami_map or None)
    x = denoise(rec.signal, rec.fs)
    cycles = delineate(x, rec.fs, list(rec.annotations))
    segs = segment(cycles, config.segmentation, rec.name)
    r_avg = float(np.mean([c.r_amplitude for c in cycles])) if cycles else 0.0
    rows, meta = [], []
    result = IngestResult(rec.name, np.empty((0, 22)), meta)
    for seg in segs:
        if seg.discarded:
            result.discarded += 1
            continue
        try:
            rows.append(extract_features(seg, x, rec.fs, r_avg))
        except FeatureError as exc:
            log.warning("record %s: %s", rec.name, exc)
            result.feature_errors += 1
            continue
        meta.append((rec.name, seg.segment_index, seg.cycles[0].r / rec.fs, seg.label))
        result.counts[seg.label] += 1
    result.rows = np.array(rows).reshape(-1, 22)
    return result


def _ingest_one(args):
    name, split, config = args
    path = Path(config.data_dir) / name
    if not path.with_suffix(".hea").exists():
        raise DataError(f"record {name} not found in {config.data_dir}")
    res = ingest_record(path, config)
    out = Path(config.out_dir) / "features" / f"{name}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_suffix(".csv.tmp")
    write_feature_csv(tmp, res.rows, res.meta)
    text = tmp.read_text()
    tmp.replace(out)
    return name, {
        "split": split,
        "file": f"features/{name}.csv",
        "sha256": sha256_text(text),
        "counts": {c: res.counts.get(c, 0) for c in CLASSES},
        "discarded": res.discarded,
        "feature_errors": res.feature_errors,
    }


def cmd_ingest(config: PipelineConfig) -> dict:
    jobs = [(name, "DS1", config) for name in config.ds1] + [(name, "DS2", config) for name in config.ds2]
    for name, _, _ in jobs:
        if not (Path(config.data_dir) / f"{name}.hea").exists():
            raise DataError(f"record {name} not found in {config.data_dir}")
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            entries = dict(pool.map(_ingest_one, jobs))
    else:
        entries = dict(map(_ingest_one, jobs))
    totals = {split: {c: sum(e["counts"][c] for e in entries.values() if e["split"] == split) for c in CLASSES}
              for split in ("DS1", "DS2")}
    manifest = {
        "version": 1,
        "fingerprint": config.fingerprint(),
        "records": dict(sorted(entries.items())),
        "totals": totals,
        "total": {c: totals["DS1"][c] + totals["DS2"][c] for c in CLASSES},
    }
    _write(Path(config.out_dir) / "manifest.json", _dump(manifest))
    return manifest


def load_manifest(config: PipelineConfig) -> dict:
    path = Path(config.out_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"no ingest cache at {path}; run 'ingest' first")
    manifest = json.loads(path.read_text())
    if manifest.get("fingerprint") != json.loads(json.dumps(config.fingerprint())):
        raise DataError("ingest cache was built with different settings; re-run 'ingest'")
    return manifest


def load_split(config: PipelineConfig, manifest: dict, split: str) -> dict[str, tuple[np.ndarray, list[tuple]]]:
    """Feature rows of every record of one split, verified against the manifest."""
    wanted = config.ds1 if split == "DS1" else config.ds2
    out = {}
    for name in wanted:
        entry = manifest["records"].get(name)
        if entry is None or entry["split"] != split:
            raise DataError(f"record {name} is not in the ingest cache as {split}; re-run 'ingest'")
        path = Path(config.out_dir) / entry["file"]
        if not path.exists() or sha256_text(path.read_text()) != entry["sha256"]:
            raise DataError(f"cached features of {name} changed since ingest; re-run 'ingest'")
        out[name] = read_feature_csv(path)
    return out


# --------------------------------------------------------------------------
# Train
# --------------------------------------------------------------------------

@dataclass
class TrainedModel:
    pca: PcaModel
    model: GlobalModel

    def clusters(self) -> dict[str, np.ndarray]:
        labels = np.array(self.model.labels)
        return {c: self.model.points[labels == c] for c in CLASSES}

    def abnormal_clusters(self) -> dict[str, np.ndarray]:
        cl = self.clusters()
        return {c: cl[c] for c in ABNORMAL}


def cmd_train(config: PipelineConfig) -> dict:
    manifest = load_manifest(config)
    if not config.ds1:
        raise DataError("DS1 is empty; nothing to train on")
    data = load_split(config, manifest, "DS1")
    rows = np.vstack([r for r, _ in data.values()]) if data else np.empty((0, 22))
    labels = [m[3] for _, meta in data.values() for m in meta]
    if len(rows) == 0:
        raise DataError("DS1 produced no usable segments")
    pca = fit_pca(rows, config.pca_dim, splits=["DS1"] * len(rows))
    reduced = apply_pca(pca, rows)
    model = GlobalModel(reduced, tuple(labels), config.k)
    missing = [c for c in CLASSES if c not in labels]
    if missing:
        raise DataError(f"DS1 has no segments of class {', '.join(missing)}")
    doc = {"pca": json.loads(pca.to_json()), "global_model": model.to_dict(),
           "manifest_sha256": sha256_text((Path(config.out_dir) / "manifest.json").read_text())}
    digest = _write(Path(config.out_dir) / "model.json", _dump(doc))
    _write(Path(config.out_dir) / "model.json.sha256", digest + "\n")
    return {"sha256": digest, "n_train": len(rows), "counts": dict(Counter(labels))}


def load_trained(config: PipelineConfig) -> TrainedModel:
    path = Path(config.out_dir) / "model.json"
    if not path.exists():
        raise DataError(f"no trained model at {path}; run 'train' first")
    doc = json.loads(path.read_text())
    return TrainedModel(PcaModel.from_json(json.dumps(doc["pca"])), GlobalModel.from_dict(doc["global_model"]))


# --------------------------------------------------------------------------
# Transform
# --------------------------------------------------------------------------

def _objectives(clusters: dict[str, np.ndarray], fn) -> tuple[float, float]:
    """(o1, o2) of the clusters after mapping every point with ``fn``."""
    mapped = {c: fn(p) for c, p in clusters.items()}
    ev = ObjectiveEvaluator(mapped, linear_basis(mapped["N"].shape[1]))
    return ev(identity_coefficients(ev.basis))


def cmd_transform_fit(config: PipelineConfig) -> dict:
    trained = load_trained(config)
    clusters = trained.clusters()
    out = Path(config.out_dir)
    mode = config.transform_mode
    before = _objectives(clusters, lambda X: X)
    diag: dict = {"mode": mode, "objectives_before": list(before)}
    if mode == "none":
        doc = {"kind": "none"}
        diag["objectives_after"] = list(before)
    elif mode.startswith("deterministic"):
        variant = mode.split("-", 1)[1]
        centroids = {c: clusters[c].mean(axis=0) for c in CLASSES}
        T = build_transform(build_frame(centroids["N"], {c: centroids[c] for c in ABNORMAL}),
                            variant, config.alpha_g, seed=config.seed, n_candidates=config.transform_candidates)
        Z = np.array([apply_transform(T, centroids[c]) for c in ABNORMAL])
        pairs = [(i, j) for i in range(3) for j in range(i + 1, 3)]
        diag["orthogonality_residual"] = max(abs(float(cosine_distance(Z[i], Z[j])) - 1.0) for i, j in pairs)
        diag["radius_residual"] = float(np.max(np.abs(np.linalg.norm(Z, axis=1) - 1.0)))
        diag["identity_dimensions"] = T.identity_dims
        diag["objectives_after"] = list(_objectives(clusters, lambda X: apply_transform(T, X)))
        doc = {"kind": "deterministic", "variant": variant, "alpha_g": config.alpha_g, "seed": config.seed,
               "n_candidates": config.transform_candidates, "reference": transform_to_dict(T)}
    else:
        basis = polynomial_basis(config.pca_dim, config.mopso_degree)
        result = mopso(clusters, basis, config.mopso)
        chosen = select_operating_point(result.archive, config.mopso_beta)
        bt = BasisTransform(basis, chosen.w)
        _write(out / "pareto_archive.csv", result.archive.to_csv())
        lin = mopso(clusters, linear_basis(config.pca_dim), config.mopso)
        _write(out / "pareto_front.svg", svgplot.scatter(
            "Pareto fronts", {"polynomial": [e.objectives for e in result.archive.sorted()],
                              "linear": [e.objectives for e in lin.archive.sorted()]},
            "o1 (symmetry)", "o2 (separability)"))
        diag["objectives_after"] = [chosen.o1, chosen.o2]
        diag["archive_size"] = len(result.archive)
        doc = bt.to_dict()
    _write(out / "transform.json", _dump(doc))
    _write(out / "transform_diagnostics.json", _dump(diag))
    return diag


def load_transform_doc(config: PipelineConfig) -> dict:
    path = Path(config.out_dir) / "transform.json"
    if not path.exists():
        raise DataError(f"no transform at {path}; run 'transform-fit' first")
    return json.loads(path.read_text())


def make_space(doc: dict, trained: TrainedModel):
    abn = trained.abnormal_clusters()
    if doc["kind"] == "none":
        return IdentitySpace(abn)
    if doc["kind"] == "deterministic":
        return DeterministicSpace(abn, doc["variant"], doc["alpha_g"], doc["seed"], doc["n_candidates"])
    if doc["kind"] == "mopso":
        return BasisSpace(BasisTransform.from_dict(doc), abn)
    raise DataError(f"unknown transform kind {doc['kind']!r}")


# --------------------------------------------------------------------------
# Classify and evaluate
# --------------------------------------------------------------------------

def samples_from_rows(rows: np.ndarray, meta: list[tuple], pca: PcaModel) -> list[FeatureSample]:
    reduced = apply_pca(pca, rows) if len(rows) else np.empty((0, pca.dim))
    return [FeatureSample(z, m[3], m[0], int(m[1]), float(m[2])) for z, m in zip(reduced, meta)]


def _classify_one(args) -> StreamResult:
    name, samples, trained, doc, personal, global_labels = args
    space = make_space(doc, trained)
    return process_stream(samples, trained.model, trained.abnormal_clusters(), space, personal, global_labels)


def classify_split(config: PipelineConfig, alphas=None) -> dict[float, dict[str, StreamResult]]:
    """Run the two-stage classifier over DS2 once per alpha value."""
    manifest = load_manifest(config)
    trained = load_trained(config)
    doc = load_transform_doc(config)
    if not config.ds2:
        raise DataError("DS2 is empty; nothing to classify")
    data = load_split(config, manifest, "DS2")
    samples = {name: samples_from_rows(rows, meta, trained.pca) for name, (rows, meta) in data.items()}
    global_labels = {
        name: classify_global_many(trained.model, np.array([s.x for s in ss])) if ss else []
        for name, ss in samples.items()
    }
    out: dict[float, dict[str, StreamResult]] = {}
    for alpha in alphas or [config.alpha]:
        personal = replace(config.personal, alpha=alpha)
        jobs = [(name, samples[name], trained, doc, personal, global_labels[name]) for name in sorted(samples)]
        if config.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                results = list(pool.map(_classify_one, jobs))
        else:
            results = [_classify_one(j) for j in jobs]
        out[alpha] = {name: res for (name, *_), res in zip(jobs, results)}
    return out


def cmd_classify(config: PipelineConfig) -> dict[str, StreamResult]:
    results = classify_split(config)[config.alpha]
    for name, res in results.items():
        path = Path(config.out_dir) / "alarms" / f"{name}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".csv.tmp")
        write_alarm_csv(res.labels, tmp)
        tmp.replace(path)
    return results


def cmd_evaluate(config: PipelineConfig) -> dict:
    alphas = sorted(set(config.alpha_sweep) | {config.alpha})
    runs = classify_split(config, alphas)
    sweep = []
    for a in alphas:
        streams = {n: r.labels for n, r in runs[a].items() if not r.skipped}
        labels = [lab for n in sorted(streams) for lab in streams[n]]
        cm = evaluation.confusion([lab.value for lab in labels], [lab.truth for lab in labels])
        sweep.append({"alpha": a, "yellow_count": sum(lab.value.endswith("y") for lab in labels),
                      "metrics": evaluation.metrics_block(cm)})
    main = runs[config.alpha]
    streams = {n: r.labels for n, r in main.items() if not r.skipped}
    report = evaluation.build_report(
        streams, config.transform_mode, config.alpha, config.window, sweep,
        [n for n, r in main.items() if r.skipped],
    )
    evaluation.emit_report(report, Path(config.out_dir) / "report")
    return report
