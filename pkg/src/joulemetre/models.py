"""Model-complexity manifests: parameter counts, buffer sizes, and MACs.

Counting conventions (these bite people, so they are stated once, here):

* MACs are per single input sample. Batch size multiplies runtime work, not
  model complexity, and keeping it out makes MACs-per-parameter
  batch-invariant.
* One fused multiply-add = 1 MAC. We never count FLOPs; if you are comparing
  against a FLOP counter, theirs will read ~2x ours.
* Bias additions are 0 MACs (no multiply). Pooling, activations, and
  normalisation are 0 MACs. Biases do count as parameters.
* Frozen layers keep their parameters in ``total`` but contribute nothing to
  ``trainable``.

Everything here is a pure function over immutable values.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import (
    InvariantViolation,
    OutOfRange,
    SchemaError,
    UnsupportedLayer,
    ZeroParameters,
)

MANIFEST_SCHEMA_VERSION = 1

#: Bytes per parameter when a size must be computed (float32 weights).
BYTES_PER_PARAM = 4


class LayerKind(str, Enum):
    DENSE = "dense"
    CONV2D = "conv2d"
    POOL = "pool"
    ACTIVATION = "activation"
    NORM = "norm"


@dataclass(frozen=True)
class LayerSpec:
    """One layer, described by the dimensions its MAC/param formulas need.

    dense     requires in_features, out_features
    conv2d    requires kernel_h, kernel_w, in_channels, out_channels, out_h, out_w
    others    carry an optional shape and contribute no MACs or parameters
    """

    kind: LayerKind
    in_features: int | None = None
    out_features: int | None = None
    kernel_h: int | None = None
    kernel_w: int | None = None
    in_channels: int | None = None
    out_channels: int | None = None
    out_h: int | None = None
    out_w: int | None = None
    bias: bool = True
    frozen: bool = False
    shape: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind == LayerKind.DENSE:
            self._require("in_features", "out_features")
        elif self.kind == LayerKind.CONV2D:
            self._require(
                "kernel_h", "kernel_w", "in_channels", "out_channels", "out_h", "out_w"
            )
        for dim in self.shape:
            if dim < 1:
                raise OutOfRange(f"shape dimension must be >= 1, got {dim}")

    def _require(self, *names: str):
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise OutOfRange(f"{self.kind.value} layer requires {name}")
            if value < 1:
                raise OutOfRange(f"{name} must be >= 1, got {value}")


def _layer_macs(layer: LayerSpec) -> int:
    if layer.kind == LayerKind.DENSE:
        return layer.in_features * layer.out_features
    if layer.kind == LayerKind.CONV2D:
        return (
            layer.kernel_h
            * layer.kernel_w
            * layer.in_channels
            * layer.out_channels
            * layer.out_h
            * layer.out_w
        )
    if layer.kind in (LayerKind.POOL, LayerKind.ACTIVATION, LayerKind.NORM):
        return 0
    raise UnsupportedLayer(f"no MAC formula for layer kind {layer.kind!r}")


def _layer_params(layer: LayerSpec) -> int:
    if layer.kind == LayerKind.DENSE:
        return layer.in_features * layer.out_features + (
            layer.out_features if layer.bias else 0
        )
    if layer.kind == LayerKind.CONV2D:
        weights = (
            layer.kernel_h * layer.kernel_w * layer.in_channels * layer.out_channels
        )
        return weights + (layer.out_channels if layer.bias else 0)
    if layer.kind in (LayerKind.POOL, LayerKind.ACTIVATION, LayerKind.NORM):
        return 0
    raise UnsupportedLayer(f"no parameter formula for layer kind {layer.kind!r}")


def count_macs(layers: list[LayerSpec]) -> int:
    """Multiply-accumulates per single input sample, summed over layers."""
    return sum(_layer_macs(layer) for layer in layers)


def count_params(layers: list[LayerSpec]) -> tuple[int, int]:
    """(total, trainable) parameter counts honouring per-layer frozen flags."""
    total = 0
    trainable = 0
    for layer in layers:
        p = _layer_params(layer)
        total += p
        if not layer.frozen:
            trainable += p
    return total, trainable


@dataclass(frozen=True)
class ModelManifest:
    name: str
    variant: str = ""
    model_size_bytes: int = 0
    total_params: int = 0
    trainable_params: int = 0
    buffer_bytes: int = 0
    macs_per_sample: int = 0
    source: str = "declared"  # declared | adapter | computed
    layers: tuple[LayerSpec, ...] = ()

    def __post_init__(self):
        for name in (
            "model_size_bytes",
            "total_params",
            "trainable_params",
            "buffer_bytes",
            "macs_per_sample",
        ):
            if getattr(self, name) < 0:
                raise InvariantViolation(f"all counts >= 0: {name} is negative")
        if self.trainable_params > self.total_params:
            raise InvariantViolation(
                "trainable_params <= total_params: "
                f"{self.trainable_params} > {self.total_params}"
            )
        if self.model_size_bytes < self.buffer_bytes:
            raise InvariantViolation(
                "model_size_bytes >= buffer_bytes: "
                f"{self.model_size_bytes} < {self.buffer_bytes}"
            )
        if self.source not in ("declared", "adapter", "computed"):
            raise InvariantViolation(f"unknown manifest source {self.source!r}")

    def to_dict(self) -> dict:
        d = {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "name": self.name,
            "variant": self.variant,
            "model_size_bytes": self.model_size_bytes,
            "total_params": self.total_params,
            "trainable_params": self.trainable_params,
            "buffer_bytes": self.buffer_bytes,
            "macs_per_sample": self.macs_per_sample,
            "source": self.source,
        }
        if self.layers:
            d["layers"] = [layer_to_dict(layer) for layer in self.layers]
        return d


def macs_per_param(manifest: ModelManifest) -> float:
    if manifest.total_params == 0:
        raise ZeroParameters(f"model {manifest.name!r} declares zero parameters")
    return manifest.macs_per_sample / manifest.total_params


# --- manifest JSON schema (the cross-process contract) ---
#
# {
#   "schema_version": 1,
#   "name": "<model name>",                  required
#   "variant": "<str>",                      optional
#   "model_size_bytes": <int>,               optional, computed if absent
#   "total_params": <int>,                   optional when layers present
#   "trainable_params": <int>,               optional when layers present
#   "buffer_bytes": <int>,                   optional, default 0
#   "macs_per_sample": <int>,                optional when layers present
#   "source": "declared"|"adapter"|"computed",  optional
#   "layers": [                              optional
#     {"kind": "dense", "in_features": 4, "out_features": 3,
#      "bias": true, "frozen": false},
#     {"kind": "conv2d", "kernel_h": 3, "kernel_w": 3, "in_channels": 1,
#      "out_channels": 16, "out_h": 5, "out_w": 5, "bias": true},
#     {"kind": "pool", "shape": [2, 2]}
#   ]
# }
#
# Declared values always win over values computable from `layers`; a
# disagreement is logged as a warning, not an error (the declaring side may
# account for layers we cannot express).

_COUNT_FIELDS = (
    "model_size_bytes",
    "total_params",
    "trainable_params",
    "buffer_bytes",
    "macs_per_sample",
)

_DIM_KEYS = (
    "in_features",
    "out_features",
    "kernel_h",
    "kernel_w",
    "in_channels",
    "out_channels",
    "out_h",
    "out_w",
)


def layer_from_dict(d: dict) -> LayerSpec:
    if not isinstance(d, dict):
        raise SchemaError(f"layer entry must be an object, got {type(d).__name__}")
    kind_raw = d.get("kind")
    try:
        kind = LayerKind(kind_raw)
    except ValueError:
        raise UnsupportedLayer(f"unknown layer kind {kind_raw!r}") from None
    kwargs = {}
    for key in _DIM_KEYS:
        if key in d:
            if not isinstance(d[key], int) or isinstance(d[key], bool):
                raise SchemaError(f"layer field {key} must be an integer")
            kwargs[key] = d[key]
    if "bias" in d:
        if not isinstance(d["bias"], bool):
            raise SchemaError("layer field bias must be a boolean")
        kwargs["bias"] = d["bias"]
    if "frozen" in d:
        if not isinstance(d["frozen"], bool):
            raise SchemaError("layer field frozen must be a boolean")
        kwargs["frozen"] = d["frozen"]
    if "shape" in d:
        if not isinstance(d["shape"], list) or not all(
            isinstance(x, int) and not isinstance(x, bool) for x in d["shape"]
        ):
            raise SchemaError("layer field shape must be a list of integers")
        kwargs["shape"] = tuple(d["shape"])
    try:
        return LayerSpec(kind=kind, **kwargs)
    except OutOfRange as exc:
        raise SchemaError(str(exc)) from None


def layer_to_dict(layer: LayerSpec) -> dict:
    d: dict = {"kind": layer.kind.value}
    for key in _DIM_KEYS:
        value = getattr(layer, key)
        if value is not None:
            d[key] = value
    if layer.kind in (LayerKind.DENSE, LayerKind.CONV2D):
        d["bias"] = layer.bias
    if layer.frozen:
        d["frozen"] = True
    if layer.shape:
        d["shape"] = list(layer.shape)
    return d


def manifest_mismatches(data: dict) -> list[str]:
    """Declared counts that disagree with what the layers array implies.

    Informational: declared values win, but a mismatch usually means the
    declaring side saw layers this schema cannot express.
    """
    layers = [layer_from_dict(entry) for entry in data.get("layers", [])]
    if not layers:
        return []
    total, trainable = count_params(layers)
    macs = count_macs(layers)
    computed = {
        "total_params": total,
        "trainable_params": trainable,
        "macs_per_sample": macs,
    }
    notes = []
    for key, expect in computed.items():
        declared = data.get(key)
        if declared is not None and declared != expect:
            notes.append(
                f"{key} declared as {declared} but layers imply {expect}"
            )
    return notes


def validate_manifest(data: dict) -> ModelManifest:
    """Schema-check a manifest dict, fill computable gaps, enforce invariants.

    Raises SchemaError for malformed input and InvariantViolation (naming the
    rule) for well-formed input that breaks the arithmetic constraints.
    """
    if not isinstance(data, dict):
        raise SchemaError(f"manifest must be a JSON object, got {type(data).__name__}")
    version = data.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise SchemaError(
            f"schema_version must be {MANIFEST_SCHEMA_VERSION}, got {version!r}"
        )
    name = data.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError("manifest requires a non-empty string name")
    variant = data.get("variant", "")
    if not isinstance(variant, str):
        raise SchemaError("variant must be a string")
    for key in _COUNT_FIELDS:
        value = data.get(key)
        if value is not None and (not isinstance(value, int) or isinstance(value, bool)):
            raise SchemaError(f"{key} must be an integer when present")
    source = data.get("source")
    if source is not None and source not in ("declared", "adapter", "computed"):
        raise SchemaError(f"unknown source {source!r}")

    layers = tuple(layer_from_dict(entry) for entry in data.get("layers", []))

    computed_any = False
    total = data.get("total_params")
    trainable = data.get("trainable_params")
    macs = data.get("macs_per_sample")
    if layers and (total is None or trainable is None):
        layer_total, layer_trainable = count_params(list(layers))
        if total is None:
            total, computed_any = layer_total, True
        if trainable is None:
            trainable, computed_any = layer_trainable, True
    if macs is None and layers:
        macs = count_macs(list(layers))
        computed_any = True
    total = total or 0
    trainable = trainable or 0
    macs = macs or 0

    buffers = data.get("buffer_bytes") or 0
    size = data.get("model_size_bytes")
    if size is None:
        size = BYTES_PER_PARAM * total + buffers
        computed_any = True

    if source is None:
        source = "computed" if computed_any else "declared"

    for note in manifest_mismatches(data):
        logging.getLogger(__name__).warning("manifest %s: %s", name, note)

    return ModelManifest(
        name=name,
        variant=variant,
        model_size_bytes=size,
        total_params=total,
        trainable_params=trainable,
        buffer_bytes=buffers,
        macs_per_sample=macs,
        source=source,
        layers=layers,
    )


def load_manifest(path: str | Path) -> ModelManifest:
    """Read and validate a manifest JSON file."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return validate_manifest(data)


def write_manifest(manifest: ModelManifest, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
