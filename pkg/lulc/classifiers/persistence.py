"""
Model files.

Layout (little-endian): magic "LKM1", u8 kind tag, u16 format version,
u32 header length, UTF-8 JSON header (ModelHeader), the arrays listed in
the header as raw little-endian blobs in header order, then a 32-byte
SHA-256 over everything before it.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from lulc.classifiers.forest import DecisionTree, ForestModel
from lulc.classifiers.kmeans import KMeansModel
from lulc.classifiers.networks import CnnModel, MlpModel
from lulc.dataset import NormalizationStats
from lulc.errors import FormatError, IoError
from lulc.schemas import ForestParams
from lulc.seeding import digests_match, payload_digest

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"LKM1"
FORMAT_VERSION = 1
KIND_TAGS = {"kmeans": 1, "forest": 2, "mlp": 3, "cnn": 4}
_TREE_FIELDS = ("feature", "threshold", "left", "right", "leaf_class")

AnyModel = Union[KMeansModel, ForestModel, MlpModel, CnnModel]
PathLike = Union[str, Path]


class ArraySpec(BaseModel):
    name: str
    dtype: str = Field(..., description="numpy little-endian dtype string, e.g. <f8")
    shape: List[int]


class ModelHeader(BaseModel):
    """JSON header of a model file."""

    kind: str
    version: int = FORMAT_VERSION
    meta: Dict[str, Any] = Field(default_factory=dict)
    arrays: List[ArraySpec] = Field(default_factory=list)


def model_kind(model: AnyModel) -> str:
    if isinstance(model, KMeansModel):
        return "kmeans"
    if isinstance(model, ForestModel):
        return "forest"
    if isinstance(model, (MlpModel, CnnModel)):
        return model.kind
    raise TypeError(f"not a model: {type(model).__name__}")


def _normalization_arrays(stats: Optional[NormalizationStats]) -> Dict[str, np.ndarray]:
    if stats is None:
        return {}
    return {"norm_mean": stats.mean, "norm_std": stats.std}


def _encode(model: AnyModel) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    kind = model_kind(model)
    if kind == "kmeans":
        arrays = {"centroids": model.centroids}
        if model.cluster_classes is not None:
            arrays["cluster_classes"] = model.cluster_classes
        meta = {
            "max_iters": model.max_iters,
            "tol": model.tol,
            "seed": model.seed,
            "n_iter": model.n_iter,
            "objective_history": list(model.objective_history),
        }
        return meta, arrays
    if kind == "forest":
        arrays = {
            name: np.concatenate([getattr(tree, name) for tree in model.trees])
            for name in _TREE_FIELDS
        }
        arrays["node_counts"] = np.array([tree.node_count for tree in model.trees], dtype=np.int64)
        meta = {
            "params": model.params.model_dump(),
            "n_features": model.n_features,
            "n_classes": model.n_classes,
            "seed": model.seed,
        }
        return meta, arrays
    meta = {"chip_size": model.chip_size, "channels": model.channels, "n_classes": model.n_classes}
    if kind == "mlp":
        meta["hidden"] = model.hidden
    else:
        meta["widths"] = list(model.widths)
    arrays = {f"param.{name}": value for name, value in model.params.items()}
    arrays.update(_normalization_arrays(model.normalization))
    return meta, arrays


def _decode(kind: str, meta: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> AnyModel:
    if kind == "kmeans":
        return KMeansModel(
            centroids=arrays["centroids"],
            max_iters=meta["max_iters"],
            tol=meta["tol"],
            seed=meta["seed"],
            n_iter=meta["n_iter"],
            objective_history=tuple(meta["objective_history"]),
            cluster_classes=arrays.get("cluster_classes"),
        )
    if kind == "forest":
        bounds = np.concatenate([[0], np.cumsum(arrays["node_counts"])])
        trees = tuple(
            DecisionTree(**{name: arrays[name][start:stop] for name in _TREE_FIELDS})
            for start, stop in zip(bounds[:-1], bounds[1:])
        )
        return ForestModel(
            trees=trees,
            params=ForestParams(**meta["params"]),
            n_features=meta["n_features"],
            n_classes=meta["n_classes"],
            seed=meta["seed"],
        )
    params = {name[len("param."):]: value for name, value in arrays.items() if name.startswith("param.")}
    stats = None
    if "norm_mean" in arrays:
        stats = NormalizationStats(mean=arrays["norm_mean"], std=arrays["norm_std"])
    common = dict(
        params=params,
        chip_size=meta["chip_size"],
        channels=meta["channels"],
        n_classes=meta["n_classes"],
        normalization=stats,
    )
    if kind == "mlp":
        return MlpModel(hidden=meta["hidden"], **common)
    return CnnModel(widths=tuple(meta["widths"]), **common)


def save_model(model: AnyModel, path: PathLike) -> None:
    """Write a model file; reloading gives bit-identical predictions."""
    kind = model_kind(model)
    meta, arrays = _encode(model)
    blobs = []
    specs = []
    for name, value in arrays.items():
        value = np.asarray(value)
        dtype = "<f8" if value.dtype.kind == "f" else "<i8"
        specs.append(ArraySpec(name=name, dtype=dtype, shape=list(value.shape)))
        blobs.append(np.ascontiguousarray(value, dtype=dtype).tobytes())
    header = ModelHeader(kind=kind, meta=meta, arrays=specs).model_dump_json().encode("utf-8")
    body = b"".join([
        MODEL_MAGIC,
        struct.pack("<BHI", KIND_TAGS[kind], FORMAT_VERSION, len(header)),
        header,
        *blobs,
    ])
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(body + payload_digest(body))
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    logger.info(f"Saved {kind} model to {path}")


def load_model(path: PathLike, expected_kind: Optional[str] = None) -> AnyModel:
    """
    Read a model file.

    Raises:
        IoError: file missing or unreadable
        FormatError: bad magic, checksum, version or kind (when expected_kind is given)
    """
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    if payload[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: not an LKM1 model file")
    if len(payload) < 11 + 32 or not digests_match(payload[-32:], payload_digest(payload[:-32])):
        raise FormatError(f"{path}: model file is truncated or corrupt")
    tag, version, header_len = struct.unpack_from("<BHI", payload, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: model format version {version}, expected {FORMAT_VERSION}")
    kinds = {v: k for k, v in KIND_TAGS.items()}
    kind = kinds.get(tag)
    if kind is None:
        raise FormatError(f"{path}: unknown model kind tag {tag}")
    if expected_kind is not None and kind != expected_kind:
        raise FormatError(f"{path}: holds a {kind} model, expected {expected_kind}")
    try:
        header = ModelHeader.model_validate_json(payload[11:11 + header_len])
        offset = 11 + header_len
        arrays = {}
        for spec in header.arrays:
            count = int(np.prod(spec.shape)) if spec.shape else 1
            arrays[spec.name] = np.frombuffer(payload, spec.dtype, count, offset).reshape(spec.shape).copy()
            offset += count * np.dtype(spec.dtype).itemsize
        if offset != len(payload) - 32 or header.kind != kind:
            raise FormatError(f"{path}: model header does not match payload")
        model = _decode(kind, header.meta, arrays)
    except (ValidationError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed model file ({exc})") from exc
    logger.debug(f"Loaded {kind} model from {path}")
    return model
