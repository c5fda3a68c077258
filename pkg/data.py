"""
Multi-center datasets for the federation simulator.

Synthetic federations are built from one latent two-Gaussian problem.  Each
center draws its own patient count, tiles per patient and positive fraction,
then applies a private affine transform (a rotation of the class direction,
a translation and additive noise).  That per-center transform is the domain
shift; with all shift scales at zero every center sees the same
class-conditional feature distribution.

Samples are grouped by patient and whole patients are assigned to the
train/val/test splits, so no patient leaks across splits.

Real tabular features can replace the synthetic ones through the CSV layout::

    center_id,patient_id,split,label,f0,f1,...,f{d-1}

where ``split`` is ``train``, ``val``, ``test`` or empty (assigned here).
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from config import defaults
from errors import ConfigError, SchemaError
from param_core import RngStream

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
CSV_ID_COLUMNS = ("center_id", "patient_id", "split", "label")
FEATURE_COLUMN_RE = re.compile(r"^f(\d+)$")


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int
    patient_id: str
    center_id: str


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def n_pos(self) -> int:
        return int(np.count_nonzero(self.labels == 1))

    @property
    def n_neg(self) -> int:
        return len(self) - self.n_pos


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """One center's samples, grouped by patient, with patient-level splits."""

    center_id: str
    features: np.ndarray
    labels: np.ndarray
    patient_ids: np.ndarray
    splits: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        patient_ids = np.array(self.patient_ids, dtype=object).reshape(-1)
        if features.ndim != 2 or features.shape[0] != labels.size or patient_ids.size != labels.size:
            raise ConfigError(
                f"inconsistent_dataset: center={self.center_id} features={features.shape} "
                f"labels={labels.size} patients={patient_ids.size}"
            )
        if not np.all(np.isfinite(features)):
            raise ConfigError(f"non_finite_features: center={self.center_id}")
        if not np.all((labels == 0) | (labels == 1)):
            raise ConfigError(f"invalid_label: center={self.center_id}")
        splits = dict(self.splits)
        if splits:
            missing = [p for p in dict.fromkeys(patient_ids) if p not in splits]
            if missing:
                raise ConfigError(f"unassigned_patients: center={self.center_id} {missing[:3]}")
            bad = {s for s in splits.values() if s not in SPLITS}
            if bad:
                raise ConfigError(f"invalid_split: center={self.center_id} {sorted(bad)}")
        for array in (features, labels, patient_ids):
            array.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "patient_ids", patient_ids)
        object.__setattr__(self, "splits", splits)

    @property
    def N_i(self) -> int:
        return int(self.labels.size)

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def patients(self) -> list[str]:
        return list(dict.fromkeys(self.patient_ids.tolist()))

    @property
    def n_patients(self) -> int:
        return len(self.patients)

    @property
    def samples(self) -> list[Sample]:
        return [
            Sample(self.features[i], int(self.labels[i]), str(self.patient_ids[i]), self.center_id)
            for i in range(self.N_i)
        ]

    def sample_splits(self) -> np.ndarray:
        if not self.splits:
            raise ConfigError(f"splits_not_assigned: center={self.center_id}")
        return np.array([self.splits[p] for p in self.patient_ids.tolist()], dtype=object)

    def split(self, name: str) -> DatasetSplit:
        if name not in SPLITS:
            raise ConfigError(f"invalid_split: {name!r}")
        selected = self.sample_splits() == name
        return DatasetSplit(self.features[selected], self.labels[selected])

    def all_samples(self) -> DatasetSplit:
        return DatasetSplit(self.features, self.labels)

    def with_splits(self, splits: Mapping[str, str]) -> ClientDataset:
        return ClientDataset(self.center_id, self.features, self.labels, self.patient_ids, splits)


@dataclass(frozen=True)
class FederationLayout:
    training_centers: tuple[str, ...]
    independent_centers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        training = tuple(self.training_centers)
        independent = tuple(self.independent_centers)
        overlap = set(training) & set(independent)
        if overlap:
            raise ConfigError(f"overlapping_layout: {sorted(overlap)}")
        if not training:
            raise ConfigError("empty_layout: no training centers")
        object.__setattr__(self, "training_centers", training)
        object.__setattr__(self, "independent_centers", independent)

    def group_of(self, center_id: str) -> str:
        if center_id in self.training_centers:
            return "local_test"
        if center_id in self.independent_centers:
            return "independent"
        raise KeyError(center_id)


@dataclass(frozen=True)
class DomainShift:
    rotation_scale: float = 0.6
    bias_scale: float = 0.5
    noise_sigma: float = 0.3

    def __post_init__(self) -> None:
        for name in ("rotation_scale", "bias_scale", "noise_sigma"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ConfigError(f"invalid_domain_shift: {name}={value}")


@dataclass(frozen=True)
class SynthConfig:
    n_centers: int = 21
    input_dim: int = 8
    patients_per_center: tuple[int, int] = (defaults.MIN_PATIENTS_PER_CENTER, 80)
    tiles_per_patient: tuple[int, int] = (4, 12)
    class_pos_fraction: tuple[float, float] = (0.2, 0.8)
    domain_shift: DomainShift = field(default_factory=DomainShift)
    class_separation: float = 3.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "patients_per_center", tuple(int(v) for v in self.patients_per_center))
        object.__setattr__(self, "tiles_per_patient", tuple(int(v) for v in self.tiles_per_patient))
        object.__setattr__(self, "class_pos_fraction", tuple(float(v) for v in self.class_pos_fraction))
        if isinstance(self.domain_shift, Mapping):
            object.__setattr__(self, "domain_shift", DomainShift(**self.domain_shift))
        if self.n_centers < 1 or self.input_dim < 1:
            raise ConfigError(f"invalid_synth_config: n_centers={self.n_centers} input_dim={self.input_dim}")
        for name in ("patients_per_center", "tiles_per_patient", "class_pos_fraction"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"infeasible_range: {name}=({lo}, {hi})")
        if self.patients_per_center[0] < len(SPLITS):
            raise ConfigError(f"infeasible_range: patients_per_center needs at least {len(SPLITS)} patients")
        if self.tiles_per_patient[0] < 1:
            raise ConfigError("infeasible_range: tiles_per_patient must be positive")
        lo, hi = self.class_pos_fraction
        if not (0 < lo and hi < 1):
            raise ConfigError(f"infeasible_range: class_pos_fraction=({lo}, {hi}) not in (0, 1)")
        if self.class_separation <= 0:
            raise ConfigError(f"invalid_class_separation: {self.class_separation}")


def center_ids_for(n_centers: int) -> list[str]:
    return [f"C{index:02d}" for index in range(n_centers)]


def _plane_rotation(direction: np.ndarray, other: np.ndarray, theta: float) -> np.ndarray:
    """Rotation by ``theta`` in the plane spanned by two orthonormal vectors."""
    d = direction.size
    return (
        np.eye(d)
        + (math.cos(theta) - 1.0) * (np.outer(direction, direction) + np.outer(other, other))
        + math.sin(theta) * (np.outer(other, direction) - np.outer(direction, other))
    )


def _uniform_in(generator: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return lo if lo == hi else float(generator.uniform(lo, hi))


def generate_federation(cfg: SynthConfig) -> dict[str, ClientDataset]:
    d = cfg.input_dim
    latent = RngStream(cfg.seed, purpose="synth.latent").generator()
    direction = latent.normal(size=d)
    direction /= np.linalg.norm(direction)
    half_gap = 0.5 * cfg.class_separation * direction
    shift = cfg.domain_shift

    datasets: dict[str, ClientDataset] = {}
    for index, center_id in enumerate(center_ids_for(cfg.n_centers)):
        generator = RngStream(cfg.seed, client_index=index, purpose="synth.center").generator()
        n_patients = int(generator.integers(cfg.patients_per_center[0], cfg.patients_per_center[1] + 1))
        pos_fraction = _uniform_in(generator, cfg.class_pos_fraction)
        theta = _uniform_in(generator, (-shift.rotation_scale, shift.rotation_scale))
        other = generator.normal(size=d)
        other -= other.dot(direction) * direction
        norm = np.linalg.norm(other)
        rotation = _plane_rotation(direction, other / norm, theta) if d > 1 and norm > 0 else np.eye(d)
        translation = shift.bias_scale * generator.normal(size=d)

        tiles = generator.integers(cfg.tiles_per_patient[0], cfg.tiles_per_patient[1] + 1, size=n_patients)
        n = int(tiles.sum())
        labels = (generator.random(n) < pos_fraction).astype(np.int64)
        signs = np.where(labels == 1, 1.0, -1.0)[:, None]
        points = generator.normal(size=(n, d)) + signs * half_gap
        features = points @ rotation.T + translation + shift.noise_sigma * generator.normal(size=(n, d))
        patient_ids = np.repeat(
            np.array([f"{center_id}-P{j:04d}" for j in range(n_patients)], dtype=object), tiles
        )

        dataset = ClientDataset(center_id, features, labels, patient_ids)
        datasets[center_id] = split_patients(
            dataset, defaults.SPLIT_FRACTIONS, RngStream(cfg.seed, client_index=index, purpose="synth.split")
        )
        logger.debug(
            "CENTER_GENERATED center_id=%s n_patients=%s n_samples=%s pos_fraction=%.3f theta=%.3f",
            center_id,
            n_patients,
            n,
            pos_fraction,
            theta,
        )
    return datasets


def _largest_remainder(total: int, fractions: Sequence[float]) -> list[int]:
    quotas = [total * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    leftover = total - sum(counts)
    by_remainder = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in by_remainder[:leftover]:
        counts[i] += 1
    return counts


def split_patients(
    ds: ClientDataset,
    fractions: Sequence[float] = defaults.SPLIT_FRACTIONS,
    rng: Optional[RngStream] = None,
) -> ClientDataset:
    """Assign whole patients to train/val/test at the given fractions."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != len(SPLITS) or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"invalid_fractions: {fractions}")
    patients = ds.patients
    n = len(patients)
    if n < len(SPLITS):
        raise ConfigError(f"too_few_patients: center={ds.center_id} n_patients={n}")

    counts = _largest_remainder(n, fractions)
    for i in range(len(counts)):
        if counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1

    order = (rng or RngStream(0, purpose="split")).generator().permutation(n)
    assignment: dict[str, str] = {}
    position = 0
    for name, count in zip(SPLITS, counts):
        for k in order[position : position + count]:
            assignment[patients[k]] = name
        position += count
    return ds.with_splits(assignment)


def kfold_center_rotation(centers: Sequence[str], k: int, rng: RngStream) -> list[FederationLayout]:
    """Rotate ``k`` near-equal center folds through the independent role."""
    centers = list(centers)
    if k < 2:
        raise ConfigError(f"invalid_kfold: k={k} must be >= 2")
    if k > len(centers):
        raise ConfigError(f"invalid_kfold: k={k} > {len(centers)} centers")
    order = rng.generator().permutation(len(centers))
    shuffled = [centers[i] for i in order]
    base, extra = divmod(len(centers), k)
    folds = []
    start = 0
    for j in range(k):
        size = base + (1 if j < extra else 0)
        folds.append(set(shuffled[start : start + size]))
        start += size
    return [
        FederationLayout(
            training_centers=tuple(c for c in centers if c not in fold),
            independent_centers=tuple(c for c in centers if c in fold),
        )
        for fold in folds
    ]


def default_layout(center_ids: Sequence[str], n_training_centers: int) -> FederationLayout:
    center_ids = list(center_ids)
    if not 1 <= n_training_centers <= len(center_ids):
        raise ConfigError(f"invalid_layout: n_training_centers={n_training_centers} with {len(center_ids)} centers")
    return FederationLayout(tuple(center_ids[:n_training_centers]), tuple(center_ids[n_training_centers:]))


def pool_split(datasets: Mapping[str, ClientDataset], center_ids: Iterable[str], name: str) -> DatasetSplit:
    parts = [datasets[c].split(name) for c in center_ids]
    return DatasetSplit(
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
    )


def describe_federation(datasets: Mapping[str, ClientDataset]) -> pd.DataFrame:
    rows = []
    for center_id, ds in datasets.items():
        sample_splits = ds.sample_splits()
        rows.append(
            {
                "center_id": center_id,
                "n_patients": ds.n_patients,
                "n_pos": int(np.count_nonzero(ds.labels == 1)),
                "n_neg": int(np.count_nonzero(ds.labels == 0)),
                "n_train": int(np.count_nonzero(sample_splits == "train")),
                "n_val": int(np.count_nonzero(sample_splits == "val")),
                "n_test": int(np.count_nonzero(sample_splits == "test")),
            }
        )
    return pd.DataFrame(rows, columns=["center_id", "n_patients", "n_pos", "n_neg", "n_train", "n_val", "n_test"])


def export_csv_federation(datasets: Mapping[str, ClientDataset], path: Path) -> None:
    frames = []
    for center_id, ds in datasets.items():
        frame = pd.DataFrame(
            {
                "center_id": center_id,
                "patient_id": ds.patient_ids,
                "split": ds.sample_splits() if ds.splits else "",
                "label": ds.labels,
            }
        )
        features = pd.DataFrame(ds.features, columns=[f"f{j}" for j in range(ds.input_dim)])
        frames.append(pd.concat([frame, features], axis=1))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, lineterminator="\n")


def _first_bad_row(mask: pd.Series) -> int:
    # +2: one for the header line, one for 1-based numbering.
    return int(np.flatnonzero(mask.to_numpy())[0]) + 2


def _feature_columns(columns: Sequence[str]) -> list[str]:
    extra = [c for c in columns if c not in CSV_ID_COLUMNS and not FEATURE_COLUMN_RE.match(c)]
    if extra:
        raise SchemaError(f"unexpected_column: {extra[0]}", column=extra[0])
    indices = sorted(int(FEATURE_COLUMN_RE.match(c).group(1)) for c in columns if FEATURE_COLUMN_RE.match(c))
    if not indices:
        raise SchemaError("missing_column: f0", column="f0")
    for expected, found in enumerate(indices):
        if expected != found:
            raise SchemaError(f"missing_column: f{expected}", column=f"f{expected}")
    return [f"f{j}" for j in indices]


def load_csv_federation(
    path: Path,
    *,
    seed: int = 0,
    fractions: Sequence[float] = defaults.SPLIT_FRACTIONS,
    min_patients: int = defaults.MIN_PATIENTS_PER_CENTER,
) -> dict[str, ClientDataset]:
    """Load a federation from the CSV layout; empty splits are assigned per center."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing_file: {path}")
    try:
        frame = pd.read_csv(
            path,
            dtype={"center_id": str, "patient_id": str, "split": str},
            keep_default_na=False,
            float_precision="round_trip",
            encoding="utf-8",
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise SchemaError(f"unparseable_csv: {exc}") from exc

    for column in CSV_ID_COLUMNS:
        if column not in frame.columns:
            raise SchemaError(f"missing_column: {column}", column=column)
    feature_columns = _feature_columns(list(frame.columns))
    if frame.empty:
        raise SchemaError("empty_csv")

    for column in ("center_id", "patient_id"):
        empty = frame[column].astype(str).str.strip() == ""
        if empty.any():
            raise SchemaError(f"empty_value: {column}", row=_first_bad_row(empty), column=column)
    bad_split = ~frame["split"].isin(("",) + SPLITS)
    if bad_split.any():
        raise SchemaError("invalid_split", row=_first_bad_row(bad_split), column="split")
    labels = pd.to_numeric(frame["label"], errors="coerce")
    bad_label = ~labels.isin((0, 1))
    if bad_label.any():
        raise SchemaError("invalid_label", row=_first_bad_row(bad_label), column="label")
    features = np.empty((len(frame), len(feature_columns)))
    for j, column in enumerate(feature_columns):
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = ~np.isfinite(values.to_numpy(dtype=np.float64))
        if bad.any():
            raise SchemaError("invalid_feature", row=int(np.flatnonzero(bad)[0]) + 2, column=column)
        features[:, j] = values.to_numpy(dtype=np.float64)

    datasets: dict[str, ClientDataset] = {}
    for index, (center_id, rows) in enumerate(frame.groupby("center_id", sort=False)):
        positions = rows.index.to_numpy()
        dataset = ClientDataset(
            str(center_id),
            features[positions],
            labels.to_numpy()[positions].astype(np.int64),
            rows["patient_id"].to_numpy(dtype=object),
        )
        if dataset.n_patients < min_patients:
            logger.warning(
                "CENTER_EXCLUDED center_id=%s n_patients=%s min_patients=%s",
                center_id,
                dataset.n_patients,
                min_patients,
            )
            continue
        split_values = rows["split"].tolist()
        blank = [offset for offset, split in enumerate(split_values) if not split]
        if blank and len(blank) < len(split_values):
            raise SchemaError(
                f"partial_split: center={center_id} leaves split empty for some rows",
                row=int(positions[blank[0]]) + 2,
                column="split",
            )
        if not blank:
            assignment: dict[str, str] = {}
            for offset, (patient, split) in enumerate(zip(rows["patient_id"].tolist(), split_values)):
                if assignment.setdefault(patient, split) != split:
                    raise SchemaError(
                        f"patient_split_conflict: {patient}", row=int(positions[offset]) + 2, column="split"
                    )
            datasets[str(center_id)] = dataset.with_splits(assignment)
        else:
            datasets[str(center_id)] = split_patients(
                dataset, fractions, RngStream(seed, client_index=index, purpose="csv.split")
            )
    logger.info("CSV_FEDERATION_LOADED path=%s centers=%s rows=%s", path, len(datasets), len(frame))
    return datasets
