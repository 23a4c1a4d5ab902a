"""Parameter checkpoints.

A checkpoint is a numpy ``.npz`` archive.  Entry ``__manifest__`` holds a JSON
list of ``{"group", "name", "shape", "frozen"}`` records in a fixed order; the
values of record ``k`` are stored row-major (float64) under key ``t{k}``.  An
optional ``__config__`` entry holds the JSON run configuration.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .optim import ParamGroup

FORMAT = "equillm-checkpoint/1"


def save_checkpoint(path: str | Path, groups: list[ParamGroup], config: dict | None = None) -> None:
    manifest = []
    arrays: dict[str, np.ndarray] = {}
    for group in groups:
        for name, t in group.tensors:
            k = len(manifest)
            manifest.append(
                {"group": group.name, "name": name, "shape": list(t.shape), "frozen": group.frozen}
            )
            arrays[f"t{k}"] = np.ascontiguousarray(t.data, dtype=np.float64)
    header = {"format": FORMAT, "tensors": manifest}
    arrays["__manifest__"] = np.array(json.dumps(header))
    if config is not None:
        arrays["__config__"] = np.array(json.dumps(config, sort_keys=True))
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint(path: str | Path) -> tuple[list[dict], dict | None]:
    """Return ``(records, config)``; each record carries its ``values`` array."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["__manifest__"]))
            config = json.loads(str(z["__config__"])) if "__config__" in z.files else None
            records = []
            for k, rec in enumerate(header["tensors"]):
                values = z[f"t{k}"]
                if list(values.shape) != rec["shape"]:
                    raise CheckpointError(
                        f"record {k} ({rec['group']}/{rec['name']}): shape {values.shape} "
                        f"does not match manifest {rec['shape']}"
                    )
                records.append({**rec, "values": values})
    except CheckpointError:
        raise
    except Exception as exc:  # zip/json/key errors all mean a broken file
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    if header.get("format") != FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')!r}")
    return records, config


def load_into(groups: list[ParamGroup], records: list[dict]) -> None:
    """Copy checkpoint values into ``groups``, matching by group and tensor name."""
    by_key = {(r["group"], r["name"]): r for r in records}
    for group in groups:
        for name, t in group.tensors:
            rec = by_key.get((group.name, name))
            if rec is None:
                raise CheckpointError(f"checkpoint lacks tensor {group.name}/{name}")
            if tuple(rec["shape"]) != t.shape:
                raise CheckpointError(
                    f"tensor {group.name}/{name}: checkpoint shape {tuple(rec['shape'])} "
                    f"vs model shape {t.shape}"
                )
            t.data = np.array(rec["values"], dtype=np.float64)
