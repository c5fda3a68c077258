"""
Parameter containers and the arithmetic primitives aggregation is built from.

A ``ParameterSet`` stores every model parameter as flat float64 arrays, one
``LayerTensor`` per (layer, kind) pair in declaration order.  The flat index
inside a layer is the parameter index used by per-parameter aggregation, so
"the same index of another client's model" is always unambiguous.

All values are immutable after construction (the arrays are flagged
read-only) and every primitive returns a new object.  Primitives check
congruence of their inputs and finiteness of their outputs; violations raise
``CongruenceError`` and ``NumericError`` respectively.

Randomness flows through ``RngStream`` values keyed by
(seed, round, client, purpose).  The same key always reproduces the same
stream, which keeps results independent of the order in which clients are
processed.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence

import numpy as np

from errors import ConfigError, CongruenceError, NumericError

LAYER_KINDS = ("weight", "bias")
MAX_SEED = 2**64 - 1
Signature = tuple[tuple[str, str, tuple[int, ...]], ...]


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by (seed, round, client, purpose)."""

    seed: int
    round_index: int = 0
    client_index: int = 0
    purpose: str = "default"

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) <= MAX_SEED:
            raise ConfigError(f"invalid_seed: {self.seed} not in [0, 2**64)")
        if self.round_index < 0 or self.client_index < 0:
            raise ConfigError(
                f"invalid_stream_id: round={self.round_index} client={self.client_index}"
            )

    @property
    def stream_id(self) -> tuple[int, int, str]:
        return (self.round_index, self.client_index, self.purpose)

    def generator(self) -> np.random.Generator:
        round_index, client_index, purpose = self.stream_id
        entropy = [int(self.seed), int(round_index), int(client_index), zlib.crc32(purpose.encode("utf-8"))]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def derive(
        self,
        *,
        round_index: Optional[int] = None,
        client_index: Optional[int] = None,
        purpose: Optional[str] = None,
    ) -> RngStream:
        return replace(
            self,
            round_index=self.round_index if round_index is None else round_index,
            client_index=self.client_index if client_index is None else client_index,
            purpose=self.purpose if purpose is None else purpose,
        )


@dataclass(frozen=True, eq=False)
class LayerTensor:
    layer_id: str
    kind: str
    shape: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"invalid_layer_kind: {self.kind!r}")
        shape = tuple(int(size) for size in self.shape)
        if not shape or any(size <= 0 for size in shape):
            raise ConfigError(f"invalid_shape: {self.layer_id}.{self.kind} {shape}")
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size != math.prod(shape):
            raise CongruenceError(
                f"shape_mismatch: {self.layer_id}.{self.kind} has {values.size} values for shape {shape}"
            )
        _require_finite(values, f"{self.layer_id}.{self.kind}")
        values.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", values)

    @property
    def signature(self) -> tuple[str, str, tuple[int, ...]]:
        return (self.layer_id, self.kind, self.shape)

    @property
    def size(self) -> int:
        return int(self.values.size)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def with_values(self, values: np.ndarray) -> LayerTensor:
        return LayerTensor(self.layer_id, self.kind, self.shape, values)


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """Ordered, immutable collection of all weights and biases of one model."""

    layers: tuple[LayerTensor, ...]

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        if not layers:
            raise ConfigError("empty_parameter_set")
        keys = [(layer.layer_id, layer.kind) for layer in layers]
        if len(set(keys)) != len(keys):
            raise ConfigError(f"duplicate_layer: {keys}")
        object.__setattr__(self, "layers", layers)

    def __iter__(self) -> Iterator[LayerTensor]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def signature(self) -> Signature:
        return tuple(layer.signature for layer in self.layers)

    @property
    def num_parameters(self) -> int:
        return sum(layer.size for layer in self.layers)

    def is_congruent(self, other: ParameterSet) -> bool:
        return self.signature == other.signature

    def layer(self, layer_id: str, kind: str) -> LayerTensor:
        for layer in self.layers:
            if layer.layer_id == layer_id and layer.kind == kind:
                return layer
        raise KeyError(f"{layer_id}.{kind}")

    def with_layer_values(self, values: Sequence[np.ndarray]) -> ParameterSet:
        if len(values) != len(self.layers):
            raise CongruenceError(f"layer_count_mismatch: {len(values)} != {len(self.layers)}")
        return ParameterSet(tuple(layer.with_values(v) for layer, v in zip(self.layers, values)))

    def checksum(self) -> int:
        """64-bit wrap-around sum of the IEEE-754 bit patterns of all values."""
        total = 0
        for layer in self.layers:
            total = (total + int(np.sum(layer.values.view(np.uint64), dtype=np.uint64))) % 2**64
        return total

    def checksum_hex(self) -> str:
        return f"{self.checksum():016x}"

    def bit_equal(self, other: ParameterSet) -> bool:
        if not self.is_congruent(other):
            return False
        return all(
            np.array_equal(a.values.view(np.uint64), b.values.view(np.uint64))
            for a, b in zip(self.layers, other.layers)
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "layers": [
                {
                    "layer_id": layer.layer_id,
                    "kind": layer.kind,
                    "shape": list(layer.shape),
                    "values": layer.values.tolist(),
                }
                for layer in self.layers
            ],
            "checksum": self.checksum_hex(),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> ParameterSet:
        try:
            layers = tuple(
                LayerTensor(
                    layer_id=str(item["layer_id"]),
                    kind=str(item["kind"]),
                    shape=tuple(item["shape"]),
                    values=np.asarray(item["values"], dtype=np.float64),
                )
                for item in payload["layers"]
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid_parameter_payload: {exc}") from exc
        params = cls(layers)
        expected = payload.get("checksum")
        if expected is not None and expected != params.checksum_hex():
            raise NumericError(f"checksum_mismatch: stored={expected} computed={params.checksum_hex()}")
        return params


@dataclass(frozen=True, eq=False)
class DropoutMask:
    """Per-layer Boolean arrays; ``True`` means the parameter survives."""

    signature: Signature
    masks: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        masks = tuple(np.array(mask, dtype=bool).reshape(-1) for mask in self.masks)
        if len(masks) != len(self.signature):
            raise CongruenceError(f"layer_count_mismatch: {len(masks)} != {len(self.signature)}")
        for (layer_id, kind, shape), mask in zip(self.signature, masks):
            if mask.size != math.prod(shape):
                raise CongruenceError(f"mask_shape_mismatch: {layer_id}.{kind} {mask.size} != {shape}")
            mask.setflags(write=False)
        object.__setattr__(self, "masks", masks)

    @classmethod
    def all_true(cls, template: ParameterSet) -> DropoutMask:
        return cls(template.signature, tuple(np.ones(layer.size, dtype=bool) for layer in template))

    def is_congruent(self, params: ParameterSet) -> bool:
        return self.signature == params.signature

    @property
    def size(self) -> int:
        return sum(int(mask.size) for mask in self.masks)

    def survivors(self) -> int:
        return sum(int(np.count_nonzero(mask)) for mask in self.masks)

    def survival_fraction(self) -> float:
        return self.survivors() / self.size


def _require_finite(values: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(values)):
        bad = int(np.count_nonzero(~np.isfinite(values)))
        raise NumericError(f"non_finite: {bad} value(s) in {where}")


def require_congruent(a: ParameterSet, b: ParameterSet) -> None:
    if a.signature == b.signature:
        return
    if len(a.layers) != len(b.layers):
        raise CongruenceError(f"non_congruent: {len(a.layers)} layers != {len(b.layers)} layers")
    for index, (left, right) in enumerate(zip(a.signature, b.signature)):
        if left != right:
            raise CongruenceError(f"non_congruent: layer {index} {left} != {right}")


def new_zeroed(template: ParameterSet) -> ParameterSet:
    return template.with_layer_values([np.zeros(layer.size) for layer in template])


def axpy(acc: ParameterSet, a: float, x: ParameterSet) -> ParameterSet:
    """Return ``acc + a * x`` elementwise."""
    if not math.isfinite(a):
        raise NumericError(f"non_finite_scalar: a={a}")
    require_congruent(acc, x)
    return acc.with_layer_values([u.values + a * v.values for u, v in zip(acc, x)])


def axpy_elementwise(acc: ParameterSet, coefficients: Sequence[np.ndarray], x: ParameterSet) -> ParameterSet:
    """Return ``acc + c * x`` with one coefficient per parameter."""
    require_congruent(acc, x)
    if len(coefficients) != len(acc.layers):
        raise CongruenceError(f"layer_count_mismatch: {len(coefficients)} != {len(acc.layers)}")
    out = []
    for u, c, v in zip(acc, coefficients, x):
        c = np.asarray(c, dtype=np.float64).reshape(-1)
        if c.size != u.size:
            raise CongruenceError(f"coefficient_shape_mismatch: {u.layer_id}.{u.kind} {c.size} != {u.size}")
        out.append(u.values + c * v.values)
    return acc.with_layer_values(out)


def select(condition: Sequence[np.ndarray], a: ParameterSet, b: ParameterSet) -> ParameterSet:
    """Take ``a`` where the per-layer condition holds and ``b`` elsewhere."""
    require_congruent(a, b)
    return a.with_layer_values([np.where(c, u.values, v.values) for c, u, v in zip(condition, a, b)])


def draw_mask(template: ParameterSet, fdr: float, rng: RngStream) -> DropoutMask:
    """Draw one survival mask: an entry survives iff ``u > fdr`` with ``u ~ U[0, 1)``.

    Every parameter is covered, biases and first/last layers included.  A
    literal zero draw at ``fdr = 0`` drops the entry (probability ~2**-53).
    """
    if not 0.0 <= fdr < 1.0:
        raise ConfigError(f"invalid_fdr: {fdr} not in [0, 1)")
    generator = rng.generator()
    masks = tuple(generator.random(layer.size) > fdr for layer in template)
    return DropoutMask(template.signature, masks)


def flatten_to_vector(p: ParameterSet) -> np.ndarray:
    return np.concatenate([layer.values for layer in p])


def unflatten(template: ParameterSet, vector: np.ndarray) -> ParameterSet:
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    if vector.size != template.num_parameters:
        raise CongruenceError(f"vector_size_mismatch: {vector.size} != {template.num_parameters}")
    offsets = np.cumsum([0] + [layer.size for layer in template])
    return template.with_layer_values([vector[lo:hi] for lo, hi in zip(offsets[:-1], offsets[1:])])


def l2_distance(a: ParameterSet, b: ParameterSet) -> float:
    require_congruent(a, b)
    total = 0.0
    for u, v in zip(a, b):
        diff = u.values - v.values
        total += float(np.dot(diff, diff))
    return math.sqrt(total)


def save_parameter_set(p: ParameterSet, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(p.to_dict(), sort_keys=True), encoding="utf-8")


def load_parameter_set(path: Path) -> ParameterSet:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid_parameter_file: {path}: {exc}") from exc
    return ParameterSet.from_dict(payload)
