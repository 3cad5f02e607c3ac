"""Multi-domain instance-set datasets: model, file IO, splits, synthesis.

A data point is a set of instances stored as a (d, n) matrix whose columns
are feature vectors, plus a binary attribute vector and an optional class
label. Domains are ordered; the last one is always the target domain, and
auxiliary domains are fully labeled.

The dataset file format is UTF-8 JSON Lines. The first line is a header::

    {"version": 1, "T": int, "d": int, "numAttributes": int,
     "numClasses": int, "targetIndex": int}

and every following line is one point::

    {"domain": int, "instances": [[...], ...], "attributes": [0|1, ...],
     "label": int | null}

where ``instances`` lists the n instance columns, each of length d.

Shuffling for the train/test split uses Fisher-Yates driven by a splitmix64
stream so the partition is reproducible from the seed alone, in any
language (see ``seeded_permutation``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

# ---------------------------------------------------------------------------
# Deterministic shuffling
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (output, next_state)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def seeded_permutation(n: int, seed: int) -> list[int]:
    """Fisher-Yates permutation of range(n) from a splitmix64 stream.

    For i = n-1 down to 1, draw u from the stream and swap positions i and
    u % (i + 1). The modulo bias is irrelevant at these sizes and keeps the
    recipe trivially portable.
    """
    perm = list(range(n))
    state = seed & _MASK64
    for i in range(n - 1, 0, -1):
        u, state = _splitmix64(state)
        j = u % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DataPoint:
    """One data point: instance matrix, attribute bits, optional label."""

    instances: np.ndarray  # (d, n) float64, columns are instance vectors
    attributes: np.ndarray  # (num_attributes,) uint8 in {0, 1}
    label: int | None = None

    def __post_init__(self):
        inst = np.asarray(self.instances, dtype=np.float64)
        if inst.ndim != 2 or inst.shape[0] < 1 or inst.shape[1] < 1:
            raise DataError(f"instances must be a (d, n) matrix, got shape {inst.shape}")
        if not np.all(np.isfinite(inst)):
            raise DataError("instances contain non-finite entries")
        attrs = np.asarray(self.attributes)
        if attrs.ndim != 1:
            raise DataError("attributes must be a flat vector")
        if not np.all((attrs == 0) | (attrs == 1)):
            raise DataError("attribute values must be 0 or 1")
        attrs = attrs.astype(np.uint8)
        if self.label is not None:
            if not isinstance(self.label, (int, np.integer)) or self.label < 0:
                raise DataError(f"label must be a nonnegative class index, got {self.label!r}")
            object.__setattr__(self, "label", int(self.label))
        inst.setflags(write=False)
        attrs.setflags(write=False)
        object.__setattr__(self, "instances", inst)
        object.__setattr__(self, "attributes", attrs)

    @property
    def dim(self) -> int:
        return self.instances.shape[0]

    @property
    def num_instances(self) -> int:
        return self.instances.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DataPoint):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.instances, other.instances)
            and np.array_equal(self.attributes, other.attributes)
        )


@dataclass(frozen=True, eq=False)
class DomainDataset:
    """Ordered points of one domain; the first ``labeled_count`` carry labels.

    ``hidden_labels``, when present, aligns with ``points`` and records the
    true labels of points whose label was hidden by the split protocol. It
    exists for analysis only and is never read by the solver.
    """

    points: tuple[DataPoint, ...]
    labeled_count: int
    hidden_labels: tuple[int | None, ...] | None = None

    def __post_init__(self):
        points = tuple(self.points)
        object.__setattr__(self, "points", points)
        if not points:
            raise DataError("a domain must contain at least one point")
        if not 0 <= self.labeled_count <= len(points):
            raise DataError(f"labeled_count {self.labeled_count} out of range")
        for i, p in enumerate(points):
            if i < self.labeled_count and p.label is None:
                raise DataError(f"point {i} is in the labeled prefix but has no label")
            if i >= self.labeled_count and p.label is not None:
                raise DataError(f"labeled point {i} appears after the labeled prefix")
        dims = {p.dim for p in points}
        nattrs = {p.attributes.shape[0] for p in points}
        if len(dims) != 1 or len(nattrs) != 1:
            raise DataError("all points of a domain must share d and the attribute length")
        if self.hidden_labels is not None and len(self.hidden_labels) != len(points):
            raise DataError("hidden_labels must align with points")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points[0].dim

    @property
    def num_attributes(self) -> int:
        return self.points[0].attributes.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DomainDataset):
            return NotImplemented
        return (
            self.labeled_count == other.labeled_count
            and self.points == other.points
            and self.hidden_labels == other.hidden_labels
        )


@dataclass(frozen=True, eq=False)
class MultiDomainDataset:
    """T >= 2 domains sharing d, attribute length, and label space.

    The last domain is the target; all earlier ones are auxiliary and must
    be fully labeled.
    """

    domains: tuple[DomainDataset, ...]
    num_classes: int

    def __post_init__(self):
        domains = tuple(self.domains)
        object.__setattr__(self, "domains", domains)
        if len(domains) < 2:
            raise DataError(f"need at least 2 domains, got {len(domains)}")
        if self.num_classes < 1:
            raise DataError("num_classes must be positive")
        dims = {dom.dim for dom in domains}
        nattrs = {dom.num_attributes for dom in domains}
        if len(dims) != 1 or len(nattrs) != 1:
            raise DataError("domains disagree on d or the attribute length")
        for t, dom in enumerate(domains[:-1]):
            if dom.labeled_count != len(dom):
                raise DataError(f"auxiliary domain {t} must be fully labeled")
        for t, dom in enumerate(domains):
            for i, p in enumerate(dom.points):
                if p.label is not None and p.label >= self.num_classes:
                    raise DataError(
                        f"domain {t} point {i}: label {p.label} >= num_classes {self.num_classes}"
                    )

    @property
    def num_domains(self) -> int:
        return len(self.domains)

    @property
    def target_index(self) -> int:
        return len(self.domains) - 1

    @property
    def target(self) -> DomainDataset:
        return self.domains[-1]

    @property
    def dim(self) -> int:
        return self.domains[0].dim

    @property
    def num_attributes(self) -> int:
        return self.domains[0].num_attributes

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiDomainDataset):
            return NotImplemented
        return self.num_classes == other.num_classes and self.domains == other.domains


def one_hot(label: int, num_classes: int) -> np.ndarray:
    """Class index to a {0,1} column of length num_classes."""
    y = np.zeros(num_classes, dtype=np.float64)
    y[label] = 1.0
    return y


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------

_HEADER_KEYS = {"version", "T", "d", "numAttributes", "numClasses", "targetIndex"}


def load_dataset(path) -> MultiDomainDataset:
    """Load and fully validate a JSON-Lines dataset file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset file {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty dataset file")

    header = _parse_line(lines[0], 1)
    missing = _HEADER_KEYS - header.keys()
    if missing:
        raise DataError(f"line 1: header missing keys {sorted(missing)}")
    num_domains = int(header["T"])
    dim = int(header["d"])
    num_attributes = int(header["numAttributes"])
    num_classes = int(header["numClasses"])
    if header["version"] != 1:
        raise DataError(f"line 1: unsupported version {header['version']}")
    if num_domains < 2:
        raise DataError(f"line 1: T must be >= 2, got {num_domains}")
    if header["targetIndex"] != num_domains - 1:
        raise DataError(
            f"line 1: targetIndex must be T-1={num_domains - 1}, got {header['targetIndex']}"
        )

    per_domain: list[list[DataPoint]] = [[] for _ in range(num_domains)]
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        rec = _parse_line(raw, lineno)
        try:
            t = int(rec["domain"])
            inst_cols = rec["instances"]
            attrs = rec["attributes"]
            label = rec["label"]
        except KeyError as exc:
            raise DataError(f"line {lineno}: missing field {exc}") from exc
        if not 0 <= t < num_domains:
            raise DataError(f"line {lineno}: domain {t} out of range [0, {num_domains})")
        if not inst_cols or any(len(col) != dim for col in inst_cols):
            raise DataError(f"line {lineno}: instances must be nonempty columns of length d={dim}")
        if len(attrs) != num_attributes:
            raise DataError(
                f"line {lineno}: expected {num_attributes} attributes, got {len(attrs)}"
            )
        if t < num_domains - 1 and label is None:
            raise DataError(f"line {lineno}: auxiliary-domain point has no label")
        if label is not None and not 0 <= int(label) < num_classes:
            raise DataError(f"line {lineno}: label {label} out of range [0, {num_classes})")
        try:
            point = DataPoint(
                instances=np.asarray(inst_cols, dtype=np.float64).T,
                attributes=np.asarray(attrs),
                label=None if label is None else int(label),
            )
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from exc
        per_domain[t].append(point)

    domains = []
    for t, points in enumerate(per_domain):
        if not points:
            raise DataError(f"domain {t} has no points")
        labeled = sum(1 for p in points if p.label is not None)
        # labels must form a prefix; DomainDataset re-checks and reports
        domains.append(DomainDataset(points=tuple(points), labeled_count=labeled))
    return MultiDomainDataset(domains=tuple(domains), num_classes=num_classes)


def _parse_line(raw: str, lineno: int) -> dict:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DataError(f"line {lineno}: parse error: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"line {lineno}: expected a JSON object")
    return obj


def save_dataset(ds: MultiDomainDataset, path) -> None:
    """Write a dataset in the JSON-Lines format; load(save(ds)) == ds."""
    header = {
        "version": 1,
        "T": ds.num_domains,
        "d": ds.dim,
        "numAttributes": ds.num_attributes,
        "numClasses": ds.num_classes,
        "targetIndex": ds.target_index,
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for t, dom in enumerate(ds.domains):
                for p in dom.points:
                    rec = {
                        "domain": t,
                        "instances": p.instances.T.tolist(),
                        "attributes": p.attributes.tolist(),
                        "label": p.label,
                    }
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write dataset file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Split protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """Target-domain split: half train / half test, half of train labeled."""

    seed: int
    train_fraction: float = 0.5
    labeled_fraction: float = 0.5

    def __post_init__(self):
        for name in ("train_fraction", "labeled_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")


def split_target(
    ds: MultiDomainDataset, spec: SplitSpec
) -> tuple[MultiDomainDataset, DomainDataset]:
    """Shuffle the target domain and split it for the training protocol.

    The target points are permuted with ``seeded_permutation(n, spec.seed)``
    and cut into a train half and a test half; the train half keeps labels
    only on its leading ceil(half * labeled_fraction) points. Hidden labels
    of the unlabeled train suffix are kept in ``hidden_labels`` for analysis.
    Auxiliary domains pass through untouched. With an odd point count the
    train half receives the extra point.
    """
    target = ds.target
    n = len(target)
    if n < 4:
        raise DataError(f"target domain needs at least 4 points to split, got {n}")
    if target.labeled_count != n:
        raise DataError("split_target requires a fully labeled target domain")

    perm = seeded_permutation(n, spec.seed)
    shuffled = [target.points[i] for i in perm]
    train_size = math.ceil(n * spec.train_fraction)
    labeled = math.ceil(train_size * spec.labeled_fraction)

    train_points: list[DataPoint] = []
    hidden: list[int | None] = []
    for i, p in enumerate(shuffled[:train_size]):
        if i < labeled:
            train_points.append(p)
            hidden.append(None)
        else:
            train_points.append(
                DataPoint(instances=p.instances, attributes=p.attributes, label=None)
            )
            hidden.append(p.label)
    train_target = DomainDataset(
        points=tuple(train_points), labeled_count=labeled, hidden_labels=tuple(hidden)
    )
    test = DomainDataset(
        points=tuple(shuffled[train_size:]), labeled_count=n - train_size
    )
    train = MultiDomainDataset(
        domains=ds.domains[:-1] + (train_target,), num_classes=ds.num_classes
    )
    return train, test


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings for a synthetic multi-domain benchmark.

    Each class has a latent prototype instance pattern shared by all
    domains; each domain adds its own random shift to every instance, and
    attributes are a fixed binary code of the class, so attribute signal
    predicts labels exactly.
    """

    num_domains: int = 3
    num_classes: int = 2
    points_per_domain: int = 20
    dim: int = 4
    num_attributes: int = 6
    min_instances: int = 3
    max_instances: int = 6
    alpha: int = 2
    seed: int = 0
    noise: float = 1.0
    shift: float = 2.0

    def __post_init__(self):
        positive = (
            "num_domains", "num_classes", "points_per_domain", "dim",
            "num_attributes", "min_instances", "max_instances", "alpha",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_domains < 2:
            raise ConfigError(f"num_domains must be >= 2, got {self.num_domains}")
        if self.min_instances < self.alpha:
            raise ConfigError(
                f"min_instances ({self.min_instances}) must be >= alpha ({self.alpha})"
            )
        if self.max_instances < self.min_instances:
            raise ConfigError("max_instances must be >= min_instances")
        if self.num_classes > 2 ** self.num_attributes:
            raise ConfigError("too many classes for distinct attribute codes")
        if self.noise < 0 or self.shift < 0:
            raise ConfigError("noise and shift must be nonnegative")


def synth_generate(cfg: SynthConfig) -> MultiDomainDataset:
    """Generate a fully labeled synthetic dataset, deterministic in cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    prototypes = rng.normal(0.0, 1.0, size=(cfg.num_classes, cfg.dim))
    shifts = rng.normal(0.0, cfg.shift, size=(cfg.num_domains, cfg.dim))
    codebook = _attribute_codebook(rng, cfg.num_classes, cfg.num_attributes)

    domains = []
    for t in range(cfg.num_domains):
        points = []
        for i in range(cfg.points_per_domain):
            c = i % cfg.num_classes
            n_i = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
            base = prototypes[c] + shifts[t]
            inst = base[:, None] + cfg.noise * rng.normal(size=(cfg.dim, n_i))
            points.append(DataPoint(instances=inst, attributes=codebook[c], label=c))
        domains.append(DomainDataset(points=tuple(points), labeled_count=len(points)))
    return MultiDomainDataset(domains=tuple(domains), num_classes=cfg.num_classes)


def _attribute_codebook(rng, num_classes: int, num_attributes: int) -> np.ndarray:
    """Distinct random binary code per class."""
    seen: set[tuple[int, ...]] = set()
    rows = []
    while len(rows) < num_classes:
        row = tuple(int(b) for b in rng.integers(0, 2, size=num_attributes))
        if row in seen:
            continue
        seen.add(row)
        rows.append(row)
    return np.asarray(rows, dtype=np.uint8)
