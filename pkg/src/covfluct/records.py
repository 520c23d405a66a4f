"""On-disk formats for batches: a long CSV plus a JSON header."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

from covfluct.fluct import FluctuationBatch, ResolventFieldBatch

BATCH_COLUMNS = ("trial", "target_id", "re", "im")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def blob_sha1(text: str) -> str:
    """Hash of ``text`` as git would store it as a blob."""
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _flat_samples(batch) -> np.ndarray:
    s = batch.samples
    return s.reshape(s.shape[0], -1)


def batch_header(batch, config: dict[str, Any] | None = None) -> dict[str, Any]:
    header: dict[str, Any] = {
        "spec": batch.spec.to_dict(),
        "trials": int(batch.trials),
        "failed_trials": list(batch.failed),
        "targets": batch.target_ids(),
        "columns": list(BATCH_COLUMNS),
    }
    if isinstance(batch, FluctuationBatch):
        header.update(kind="entries", function=batch.f.to_dict(), centering=batch.centering,
                      pairs=[list(p) for p in batch.pairs])
    elif isinstance(batch, ResolventFieldBatch):
        header.update(kind="resolvent", m=batch.m,
                      points=[[z.real, z.imag] for z in batch.points])
    if config is not None:
        header["config"] = config
        header["config_sha1"] = blob_sha1(canonical_json(config))
    return header


def write_batch(batch, directory: str | Path, stem: str = "batch",
                config: dict[str, Any] | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (trial, target_id, re, im) and ``<stem>.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    flat = _flat_samples(batch)
    ids = batch.target_ids()
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BATCH_COLUMNS)
        for t in range(flat.shape[0]):
            for k, target in enumerate(ids):
                v = complex(flat[t, k])
                writer.writerow((t, target, repr(v.real), repr(v.imag)))
    json_path.write_text(json.dumps(batch_header(batch, config), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def read_batch_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Samples as a (trials, targets) complex array, plus the target ids in order."""
    rows: dict[int, dict[str, complex]] = {}
    ids: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            t = int(row["trial"])
            if row["target_id"] not in ids:
                ids.append(row["target_id"])
            rows.setdefault(t, {})[row["target_id"]] = complex(float(row["re"]), float(row["im"]))
    out = np.array([[rows[t][i] for i in ids] for t in sorted(rows)])
    return ids, out
