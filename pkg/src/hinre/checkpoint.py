"""Checkpoint directories: a tab-separated manifest, raw float64 data and JSON metadata.

Layout::

    ckpt/
      manifest.tsv   name <TAB> shape <TAB> offset   (offset in float64 elements)
      params.bin     little-endian float64, concatenated in manifest order
      meta.json      model config, vocabulary, threshold, free-form extras

Everything is written to a sibling temporary directory first and renamed
into place, so a crash never leaves a half-written checkpoint behind.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .autodiff import ParameterSet
from .corpus import Vocabulary
from .model import HinModel, ModelConfig, param_shapes

MANIFEST = "manifest.tsv"
DATA = "params.bin"
META = "meta.json"
FORMAT_VERSION = 1


class CheckpointMismatch(ValueError):
    """Stored parameters disagree with the configuration they claim to belong to."""

    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_checkpoint(path, model: HinModel, vocab: Vocabulary, threshold: float, extra: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}."))
    try:
        lines, offset = [], 0
        with open(tmp / DATA, "wb") as fh:
            for name, t in model.params.items():
                arr = np.ascontiguousarray(t.data, dtype="<f8")
                fh.write(arr.tobytes())
                shape = "x".join(str(n) for n in arr.shape)
                lines.append(f"{name}\t{shape}\t{offset}")
                offset += arr.size
        (tmp / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
        meta = {
            "format": FORMAT_VERSION,
            "model": model.cfg.to_json(),
            "vocab": vocab.to_json(),
            "threshold": None if math.isinf(threshold) else float(threshold),
            "frozen": sorted(n for n, t in model.params.items() if not t.requires_grad),
            "extra": extra or {},
        }
        (tmp / META).write_text(_dumps(meta), encoding="utf-8")
        if path.exists():
            old = path.with_name(f".{path.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(path, old)
            os.replace(tmp, path)
            shutil.rmtree(old)
        else:
            os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _parse_shape(text):
    return tuple(int(n) for n in text.split("x")) if text else ()


def read_manifest(path) -> list[tuple[str, tuple, int]]:
    rows = []
    for lineno, line in enumerate((Path(path) / MANIFEST).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise CheckpointMismatch(f"{MANIFEST} line {lineno}: expected 3 tab-separated fields")
        rows.append((parts[0], _parse_shape(parts[1]), int(parts[2])))
    return rows


def load_checkpoint(path, cfg: ModelConfig | None = None):
    """Return ``(model, vocab, threshold, meta)``.

    ``cfg`` defaults to the stored config.  Any name or shape disagreement
    between the manifest and ``param_shapes(cfg)`` raises
    :class:`CheckpointMismatch` naming the first offending parameter.
    """
    path = Path(path)
    for part in (MANIFEST, DATA, META):
        if not (path / part).is_file():
            raise FileNotFoundError(f"checkpoint {path} is missing {part}")
    meta = json.loads((path / META).read_text(encoding="utf-8"))
    if cfg is None:
        cfg = ModelConfig.from_json(meta["model"])
    vocab = Vocabulary.from_json(meta["vocab"])
    expected = param_shapes(cfg)
    rows = read_manifest(path)
    flat = np.fromfile(path / DATA, dtype="<f8")

    stored = {name: shape for name, shape, _ in rows}
    for name, shape in expected.items():
        if name not in stored:
            raise CheckpointMismatch(f"parameter {name!r} missing from checkpoint", name)
        if tuple(stored[name]) != tuple(shape):
            raise CheckpointMismatch(
                f"parameter {name!r} has shape {stored[name]} in checkpoint, config expects {shape}", name)
    for name in stored:
        if name not in expected:
            raise CheckpointMismatch(f"checkpoint parameter {name!r} is not part of the config", name)

    frozen = set(meta.get("frozen", []))
    params = ParameterSet()
    for name, shape, offset in rows:
        n = int(np.prod(shape)) if shape else 1
        if offset + n > flat.size:
            raise CheckpointMismatch(f"parameter {name!r} runs past the end of {DATA}", name)
        params.add(name, flat[offset:offset + n].reshape(shape).astype(np.float64), frozen=name in frozen)
    threshold = meta.get("threshold")
    return HinModel(cfg, params), vocab, (math.inf if threshold is None else float(threshold)), meta
