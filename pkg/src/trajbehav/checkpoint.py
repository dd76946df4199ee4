"""Model persistence on top of the binary container.

A checkpoint stores the model kind, its architecture config, the class map,
optional normalization stats, and every parameter tensor in its native
precision, so a save/load roundtrip restores parameters bit-exactly and
reproduces predictions bit-identically. Loads verify the integrity checksum
and reject shape or config mismatches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .errors import CheckpointError
from .hmm import GaussianHMM, HMMClassifier
from .models import config_from_dict, config_to_dict, model_from_config


@dataclass
class Checkpoint:
    model: object                # neural model or HMMClassifier
    kind: str
    class_names: list
    normalization: dict | None = None


def save_checkpoint(model, class_names, path, normalization=None):
    if isinstance(model, HMMClassifier):
        meta = {
            "model_kind": "hmm",
            "class_names": list(class_names),
            "normalization": normalization,
            "n_states": model.models[0].n_states,
        }
        arrays = {}
        for i, m in enumerate(model.models):
            arrays[f"class{i}.initial"] = m.initial
            arrays[f"class{i}.transitions"] = m.transitions
            arrays[f"class{i}.means"] = m.means
            arrays[f"class{i}.variances"] = m.variances
        write_container(path, "model", meta, arrays)
        return

    meta = {
        "model_kind": model.kind,
        "config": config_to_dict(model.config),
        "precision": model.precision,
        "class_names": list(class_names),
        "normalization": normalization,
    }
    arrays = {name: p.data for name, p in model.parameters.items()}
    write_container(path, "model", meta, arrays)


def load_checkpoint(path):
    kind, meta, arrays = read_container(path)
    if kind != "model":
        raise CheckpointError(f"{path}: expected a model checkpoint, found {kind!r}")
    model_kind = meta["model_kind"]
    class_names = list(meta["class_names"])

    if model_kind == "hmm":
        models = []
        for i in range(len(class_names)):
            try:
                models.append(
                    GaussianHMM(
                        initial=arrays[f"class{i}.initial"],
                        transitions=arrays[f"class{i}.transitions"],
                        means=arrays[f"class{i}.means"],
                        variances=arrays[f"class{i}.variances"],
                    )
                )
            except KeyError as exc:
                raise CheckpointError(
                    f"{path}: missing tensors for class index {i}"
                ) from exc
        clf = HMMClassifier(models=models, class_names=class_names)
        return Checkpoint(
            model=clf, kind="hmm", class_names=class_names,
            normalization=meta.get("normalization"),
        )

    config = config_from_dict(model_kind, meta["config"])
    model = model_from_config(model_kind, config, seed=0, precision=meta["precision"])
    expected = set(model.parameters)
    found = set(arrays)
    if expected != found:
        missing = sorted(expected - found)
        extra = sorted(found - expected)
        raise CheckpointError(
            f"{path}: parameter set mismatch (missing {missing}, unexpected {extra})"
        )
    for name, p in model.parameters.items():
        stored = arrays[name]
        if stored.shape != p.data.shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {stored.shape}, "
                f"config implies {p.data.shape}"
            )
        if stored.dtype != p.data.dtype:
            raise CheckpointError(
                f"{path}: tensor {name} stored as {stored.dtype}, "
                f"precision {meta['precision']!r} implies {p.data.dtype}"
            )
        p.data = np.ascontiguousarray(stored)
        p.zero_grad()
    return Checkpoint(
        model=model, kind=model_kind, class_names=class_names,
        normalization=meta.get("normalization"),
    )
