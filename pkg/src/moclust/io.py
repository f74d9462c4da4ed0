"""On-disk formats.

Dataset files are JSON lines, one observation per line::

    {"id": "obs0000", "r": 2, "c": 4, "x": [...r*c values, row-major...], "cluster": 1, "outlier": false}

``cluster`` and ``outlier`` are optional ground truth.  Model files are a
single JSON document; trace files are CSV with a header row.  Floats are
written with ``repr`` precision, so write -> read -> write is byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .data import DataSet
from .em import FitResult, MixtureModel
from .errors import DimensionError
from .matnorm import normalize_identifiability
from .simgen import LabeledDataSet

TRACE_HEADER = ("f", "removed_id", "kl", "loglik", "n_remaining")


class DataFormatError(ValueError):
    """Malformed input file."""


def dataset_records(data: DataSet) -> Iterable[dict]:
    for k, obs_id in enumerate(data.ids):
        rec = {"id": obs_id, "r": data.r, "c": data.c, "x": data.X[k].ravel().tolist()}
        if data.labels is not None:
            rec["cluster"] = int(data.labels[k])
        if data.is_outlier is not None:
            rec["outlier"] = bool(data.is_outlier[k])
        yield rec


def write_dataset(path, data) -> None:
    data = getattr(data, "data", data)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in dataset_records(data):
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path) -> DataSet:
    ids, xs, clusters, flags = [], [], [], []
    shape = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                r, c, x = int(rec["r"]), int(rec["c"]), rec["x"]
                obs_id = str(rec["id"])
            except (ValueError, KeyError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad record ({exc})") from exc
            if shape is None:
                shape = (r, c)
            if (r, c) != shape:
                raise DataFormatError(f"{path}:{lineno}: shape {(r, c)} differs from {shape}")
            if len(x) != r * c:
                raise DataFormatError(f"{path}:{lineno}: expected {r * c} values, got {len(x)}")
            ids.append(obs_id)
            xs.append(np.asarray(x, dtype=float).reshape(r, c))
            clusters.append(rec.get("cluster"))
            flags.append(rec.get("outlier"))
    if not ids:
        raise DataFormatError(f"{path}: no records")
    if len(set(ids)) != len(ids):
        raise DataFormatError(f"{path}: duplicate ids")
    labels = None if any(v is None for v in clusters) else np.array(clusters, dtype=int)
    outl = None if any(v is None for v in flags) else np.array(flags, dtype=bool)
    try:
        return DataSet(np.stack(xs), tuple(ids), labels, outl)
    except (DimensionError, ValueError) as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def read_labeled(path) -> LabeledDataSet:
    data = read_dataset(path)
    if data.labels is None or data.is_outlier is None:
        raise DataFormatError(f"{path}: ground truth (cluster, outlier) missing")
    return LabeledDataSet(data, data.labels, data.is_outlier)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def model_to_dict(model: MixtureModel, loglik: Optional[float] = None) -> dict:
    return {
        "G": model.G,
        "r": model.r,
        "c": model.c,
        "components": [
            {
                "pi": float(model.pi[g]),
                "M": model.M[g].ravel().tolist(),
                "U": model.U[g].ravel().tolist(),
                "V": model.V[g].ravel().tolist(),
            }
            for g in range(model.G)
        ],
        "loglik": None if loglik is None else float(loglik),
        "normalized": bool(np.allclose(np.trace(model.U, axis1=1, axis2=2), model.r, rtol=1e-12, atol=0)),
    }


def model_from_dict(doc: dict) -> tuple[MixtureModel, Optional[float]]:
    try:
        G, r, c = int(doc["G"]), int(doc["r"]), int(doc["c"])
        comps = doc["components"]
        pi = np.array([cp["pi"] for cp in comps], dtype=float)
        M = np.array([cp["M"] for cp in comps], dtype=float).reshape(G, r, c)
        U = np.array([cp["U"] for cp in comps], dtype=float).reshape(G, r, r)
        V = np.array([cp["V"] for cp in comps], dtype=float).reshape(G, c, c)
    except (KeyError, ValueError, TypeError) as exc:
        raise DataFormatError(f"bad model document ({exc})") from exc
    tr = np.trace(U, axis1=1, axis2=2)
    if not np.allclose(tr, r, rtol=1e-12, atol=0):
        U, V = normalize_identifiability(U, V)
    return MixtureModel(pi, M, U, V), doc.get("loglik")


def write_model(path, model: MixtureModel, loglik: Optional[float] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model, loglik), fh, indent=2)
        fh.write("\n")


def read_model(path) -> tuple[MixtureModel, Optional[float]]:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def write_labels(path, ids, fit: Optional[FitResult] = None, labels=None) -> None:
    """Per-observation hard labels, plus responsibilities when ``fit`` is given."""
    labels = fit.hard_labels if labels is None else labels
    G = 0 if fit is None else fit.zhat.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"z{g + 1}" for g in range(G)])
        for k, obs_id in enumerate(ids):
            row = [obs_id, int(labels[k])]
            if G:
                row += [repr(float(v)) for v in fit.zhat[k]]
            w.writerow(row)


def read_labels(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["id"]: int(row["label"]) for row in csv.DictReader(fh)}


def write_trace(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for it in trace:
            w.writerow([it.f, it.removed_id or "", repr(it.kl.value), repr(float(it.loglik)), it.n_remaining])


def read_trace(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {
            "f": int(r["f"]),
            "removed_id": r["removed_id"] or None,
            "kl": float(r["kl"]),
            "loglik": float(r["loglik"]),
            "n_remaining": int(r["n_remaining"]),
        }
        for r in rows
    ]


def normalized_kl(kl_values) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant trace maps to zeros."""
    kl = np.asarray(kl_values, dtype=float)
    span = kl.max() - kl.min()
    return np.zeros_like(kl) if span == 0 else (kl - kl.min()) / span


def write_plot_csv(path, trace) -> None:
    scaled = normalized_kl([it.kl.value for it in trace])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["f", "kl_normalized"])
        for it, v in zip(trace, scaled):
            w.writerow([it.f, repr(float(v))])


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
