"""Synthetic Gaussian-mixture data, dominant-class partitioning and label flipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, DatasetParseError

DEFAULT_NOISE_LEVELS = (2.0, 6.0, 10.0, 14.0, 18.0)
FORMAT_TAG = "fldata"
FORMAT_VERSION = "v1"


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    noise_level: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"features must be a 2-d matrix, got shape {x.shape}")
        y = np.asarray(self.labels)
        if y.size and not np.issubdtype(y.dtype, np.integer):
            raise DataError("labels must be integers")
        y = y.astype(np.int64).reshape(-1)
        lv = np.asarray(self.noise_level, dtype=np.float64).reshape(-1)
        if not (x.shape[0] == y.shape[0] == lv.shape[0]):
            raise DataError(
                f"length mismatch: {x.shape[0]} features, {y.shape[0]} labels, {lv.shape[0]} noise levels"
            )
        m = int(self.num_classes)
        if m < 1:
            raise DataError("num_classes must be positive")
        if y.size and (y.min() < 0 or y.max() >= m):
            raise DataError(f"labels must lie in [0, {m}), found {int(y.min())}..{int(y.max())}")
        if not np.all(np.isfinite(x)):
            raise DataError("features must be finite")
        if np.any(lv < 0) or not np.all(np.isfinite(lv)):
            raise DataError("noise levels must be finite and non-negative")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "noise_level", lv)
        object.__setattr__(self, "num_classes", m)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(
            self.features[index], self.labels[index], self.noise_level[index], self.num_classes
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def equals(self, other: "LabeledDataset") -> bool:
        """Bit-exact equality of every field."""
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.noise_level, other.noise_level)
        )


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    dominant_fraction: float = 0.5
    dominant_class_of: Mapping[int, int] | None = None
    seed: int = 0
    # None picks the largest size every client can be served with
    shard_size: int | None = None

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigurationError("num_clients must be at least 1")
        if not 0.0 < self.dominant_fraction < 1.0:
            raise ConfigurationError(f"dominant_fraction must lie in (0, 1), got {self.dominant_fraction}")
        if self.shard_size is not None and self.shard_size < 2:
            raise ConfigurationError("shard_size must be at least 2")

    def dominant_classes(self, num_classes: int) -> list[int]:
        if self.dominant_class_of is None:
            return [k % num_classes for k in range(self.num_clients)]
        missing = [k for k in range(self.num_clients) if k not in self.dominant_class_of]
        if missing:
            raise ConfigurationError(f"no dominant class given for clients {missing}")
        return [int(self.dominant_class_of[k]) for k in range(self.num_clients)]


@dataclass(frozen=True)
class PoisonSpec:
    """Label flips applied by malicious clients: ``flips[client] = (source, target)``."""

    flips: Mapping[int, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        for client, (source, target) in self.flips.items():
            if source == target:
                raise ConfigurationError(f"client {client}: flip source and target are both {source}")

    @property
    def malicious_clients(self) -> frozenset[int]:
        return frozenset(self.flips)

    @property
    def num_attackers(self) -> int:
        return len(self.flips)


def class_centers(num_classes: int, dim: int, seed: int) -> np.ndarray:
    """Unit-norm class centers: columns of a random orthonormal basis, then their negations.

    Any two distinct centers are at distance sqrt(2) (orthogonal) or 2 (antipodal),
    so at most ``2 * dim`` centers exist.
    """
    if num_classes > 2 * dim:
        raise ConfigurationError(
            f"cannot place {num_classes} separated unit centers in dimension {dim} (max {2 * dim})"
        )
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    basis = np.concatenate([q.T, -q.T])
    return basis[:num_classes].copy()


def noise_std(noise_level, noise_scale: float) -> np.ndarray:
    """Perturbation std for a noise level read as SNR in dB: scale * 10^(-level/20)."""
    return noise_scale * 10.0 ** (-np.asarray(noise_level, dtype=np.float64) / 20.0)


def generate_synthetic(
    num_classes: int,
    dim: int,
    samples_per_class: int,
    noise_levels: Sequence[float] = DEFAULT_NOISE_LEVELS,
    seed: int = 0,
    noise_scale: float = 1.0,
) -> LabeledDataset:
    """Balanced Gaussian mixture around unit class centers.

    Samples of each class cycle through ``noise_levels``; higher levels mean
    smaller perturbations. ``noise_scale=0`` puts every sample on its center.
    """
    if num_classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {num_classes}")
    if dim < 2:
        raise ConfigurationError(f"need dimension >= 2, got {dim}")
    if samples_per_class < 1:
        raise ConfigurationError(f"need at least one sample per class, got {samples_per_class}")
    if noise_scale < 0:
        raise ConfigurationError("noise_scale must be non-negative")
    levels = np.asarray(noise_levels, dtype=np.float64)
    if levels.ndim != 1 or levels.size == 0 or np.any(levels < 0):
        raise ConfigurationError("noise_levels must be a non-empty list of non-negative values")

    rng = np.random.default_rng(seed)
    centers = class_centers(num_classes, dim, int(rng.integers(2**63 - 1)))
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    lv = np.tile(levels[np.arange(samples_per_class) % levels.size], num_classes)
    perturb = rng.standard_normal((labels.size, dim)) * noise_std(lv, noise_scale)[:, None]
    features = centers[labels] + perturb

    order = rng.permutation(labels.size)
    return LabeledDataset(features[order], labels[order], lv[order], num_classes)


def train_test_split(dataset: LabeledDataset, test_fraction: float, seed: int):
    """Stratified split: each class sends round(test_fraction * count) samples to the test set."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(test_fraction * idx.size))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return dataset.subset(train_idx), dataset.subset(test_idx)


def _shard_composition(shard_size, dominant, num_classes, fraction):
    """Per-class sample counts for one client shard."""
    counts = np.zeros(num_classes, dtype=np.int64)
    n_dom = int(np.floor(fraction * shard_size))
    counts[dominant] = n_dom
    rest = shard_size - n_dom
    others = [(dominant + j) % num_classes for j in range(1, num_classes)]
    if others:
        base, extra = divmod(rest, len(others))
        for j, c in enumerate(others):
            counts[c] = base + (1 if j < extra else 0)
    else:
        counts[dominant] += rest
    return counts


def _demand(shard_size, dominants, num_classes, fraction):
    return sum(_shard_composition(shard_size, d, num_classes, fraction) for d in dominants)


def partition(dataset: LabeledDataset, spec: PartitionSpec) -> list[LabeledDataset]:
    """Split ``dataset`` into disjoint non-IID shards, one per client.

    Client k gets floor(dominant_fraction * size) samples of its dominant class
    and the rest round-robin over the other classes. Samples that no shard
    needs are dropped.
    """
    m = dataset.num_classes
    dominants = spec.dominant_classes(m)
    for k, c in enumerate(dominants):
        if not 0 <= c < m:
            raise ConfigurationError(f"client {k}: dominant class {c} outside [0, {m})")
    supply = dataset.class_counts()

    if spec.shard_size is not None:
        size = spec.shard_size
        need = _demand(size, dominants, m, spec.dominant_fraction)
        short = np.flatnonzero(need > supply)
        if short.size:
            c = int(short[0])
            raise DataError(
                f"class {c}: shards need {int(need[c])} samples but only {int(supply[c])} available"
            )
    else:
        size = len(dataset) // spec.num_clients
        while size >= 2 and np.any(_demand(size, dominants, m, spec.dominant_fraction) > supply):
            size -= 1
        if size < 2:
            need = _demand(2, dominants, m, spec.dominant_fraction)
            c = int(np.flatnonzero(need > supply)[0]) if np.any(need > supply) else 0
            raise DataError(f"class {c}: not enough samples to give every client a shard")

    rng = np.random.default_rng(spec.seed)
    pools = [np.flatnonzero(dataset.labels == c) for c in range(m)]
    pools = [p[rng.permutation(p.size)] for p in pools]
    taken = np.zeros(m, dtype=np.int64)

    shards = []
    for k, dom in enumerate(dominants):
        comp = _shard_composition(size, dom, m, spec.dominant_fraction)
        if comp[dom] < 1 or (m > 1 and comp.sum() - comp[dom] < 1):
            raise DataError(
                f"client {k}: shard of {size} cannot hold both dominant and non-dominant samples"
            )
        idx = []
        for c in range(m):
            idx.append(pools[c][taken[c]:taken[c] + comp[c]])
            taken[c] += comp[c]
        idx = np.concatenate(idx)
        idx = idx[rng.permutation(idx.size)]
        shards.append(dataset.subset(idx))
    return shards


def poison(shard: LabeledDataset, flip: tuple[int, int]) -> LabeledDataset:
    """Relabel every ``source`` sample as ``target``; features are left untouched."""
    source, target = (int(v) for v in flip)
    if source == target:
        raise ConfigurationError(f"flip source and target are both {source}")
    for c in (source, target):
        if not 0 <= c < shard.num_classes:
            raise ConfigurationError(f"flip class {c} outside [0, {shard.num_classes})")
    labels = shard.labels.copy()
    labels[labels == source] = target
    return LabeledDataset(shard.features.copy(), labels, shard.noise_level.copy(), shard.num_classes)


def save_dataset(dataset: LabeledDataset, path) -> None:
    n, d = dataset.features.shape
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION} n={n} d={d} M={dataset.num_classes}"]
    for label, level, row in zip(dataset.labels, dataset.noise_level, dataset.features):
        values = " ".join(f"{v:.17g}" for v in row)
        lines.append(f"{int(label)} {level:.17g} {values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _parse_header(line):
    parts = line.split()
    if len(parts) != 5 or parts[0] != FORMAT_TAG:
        raise DatasetParseError(f"expected '{FORMAT_TAG} {FORMAT_VERSION} n=<n> d=<d> M=<M>' header", line=1)
    if parts[1] != FORMAT_VERSION:
        raise DatasetParseError(f"unsupported format version {parts[1]!r}", line=1)
    fields = {}
    for part, key in zip(parts[2:], ("n", "d", "M")):
        name, _, value = part.partition("=")
        if name != key or not value.isdigit():
            raise DatasetParseError(f"bad header field {part!r}, expected {key}=<integer>", line=1)
        fields[key] = int(value)
    return fields["n"], fields["d"], fields["M"]


def load_dataset(path) -> LabeledDataset:
    with open(path, encoding="ascii") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetParseError("empty file", line=1)
    n, d, m = _parse_header(lines[0])
    body = lines[1:]
    if len(body) != n:
        raise DatasetParseError(f"header promises {n} samples, file has {len(body)}", line=len(lines) + 1)

    features = np.empty((n, d), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    levels = np.empty(n, dtype=np.float64)
    for i, line in enumerate(body):
        lineno = i + 2
        parts = line.split()
        if len(parts) != d + 2:
            raise DatasetParseError(f"expected {d + 2} fields, found {len(parts)}", line=lineno)
        try:
            label = int(parts[0])
            levels[i] = float(parts[1])
            features[i] = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise DatasetParseError(f"malformed number ({exc})", line=lineno) from None
        if not 0 <= label < m:
            raise DataError(f"line {lineno}: label {label} outside [0, {m}) declared in header")
        labels[i] = label
    return LabeledDataset(features, labels, levels, m)
