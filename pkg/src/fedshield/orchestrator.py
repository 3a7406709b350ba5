"""Synchronous federated training loop with optional label-flipping clients."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import aggregation as agg
from . import nn
from .data import (
    DEFAULT_NOISE_LEVELS,
    LabeledDataset,
    PartitionSpec,
    PoisonSpec,
    generate_synthetic,
    partition,
    poison,
    train_test_split,
)
from .errors import ConfigurationError, DivergenceError, FedShieldError

AGGREGATORS = ("fedavg", "none", "multikrum", "dual_attention")

# labelled offsets for deriving independent child seeds from the master seed
SEED_DATA = 1
SEED_SPLIT = 2
SEED_PARTITION = 3
SEED_INIT = 4
SEED_SHUFFLE = 5

DIVERGENCE_FACTOR = 10.0


def child_seed(master: int, label: int) -> int:
    return int(np.random.SeedSequence([master, label]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Flip:
    client: int
    target: int
    # None means "the client's dominant class"
    source: Optional[int] = None


@dataclass(frozen=True)
class ExperimentConfig:
    rounds: int
    num_clients: int = 11
    num_classes: int = 11
    dim: int = 16
    hidden_sizes: tuple[int, ...] = (32,)
    samples_per_class: int = 500
    noise_levels: tuple[float, ...] = DEFAULT_NOISE_LEVELS
    noise_scale: float = 1.0
    test_fraction: float = 0.4
    dominant_fraction: float = 0.5
    dominant_classes: Optional[tuple[int, ...]] = None
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.0005
    aggregator: str = "dual_attention"
    beta: float = 0.75
    multikrum_f: int = 0
    multikrum_m: Optional[int] = None
    flips: tuple[Flip, ...] = ()
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.dim, *self.hidden_sizes, self.num_classes)

    @property
    def num_attackers(self) -> int:
        return len(self.flips)

    def dominant_class_of(self) -> dict[int, int]:
        if self.dominant_classes is None:
            return {k: k % self.num_classes for k in range(self.num_clients)}
        return dict(enumerate(self.dominant_classes))

    def partition_spec(self) -> PartitionSpec:
        return PartitionSpec(
            num_clients=self.num_clients,
            dominant_fraction=self.dominant_fraction,
            dominant_class_of=self.dominant_class_of(),
            seed=child_seed(self.seed, SEED_PARTITION),
        )

    def poison_spec(self) -> PoisonSpec:
        dominant = self.dominant_class_of()
        return PoisonSpec(
            {f.client: (dominant[f.client] if f.source is None else f.source, f.target) for f in self.flips}
        )

    def validate(self):
        def bad(name, msg):
            raise ConfigurationError(f"{name}: {msg}")

        if self.rounds < 1:
            bad("rounds", "must be >= 1")
        if self.num_clients < 2:
            bad("num_clients", "must be >= 2")
        if self.num_classes < 2:
            bad("num_classes", "must be >= 2")
        if self.dim < 2:
            bad("dim", "must be >= 2")
        if self.num_classes > 2 * self.dim:
            bad("num_classes", f"at most 2 * dim = {2 * self.dim} classes fit in dimension {self.dim}")
        if any(h < 1 for h in self.hidden_sizes):
            bad("hidden_sizes", "every hidden layer needs at least one unit")
        if self.samples_per_class < 1:
            bad("samples_per_class", "must be >= 1")
        if not self.noise_levels or any(v < 0 for v in self.noise_levels):
            bad("noise_levels", "need at least one non-negative level")
        if self.noise_scale < 0:
            bad("noise_scale", "must be >= 0")
        if not 0 < self.test_fraction < 1:
            bad("test_fraction", "must lie in (0, 1)")
        if not 0 < self.dominant_fraction < 1:
            bad("dominant_fraction", "must lie in (0, 1)")
        if self.dominant_classes is not None:
            if len(self.dominant_classes) != self.num_clients:
                bad("dominant_classes", f"need one entry per client ({self.num_clients})")
            if any(not 0 <= c < self.num_classes for c in self.dominant_classes):
                bad("dominant_classes", f"classes must lie in [0, {self.num_classes})")
        if self.local_epochs < 0:
            bad("local_epochs", "must be >= 0")
        if self.batch_size < 1:
            bad("batch_size", "must be >= 1")
        if not self.learning_rate > 0:
            bad("learning_rate", "must be > 0")
        if self.aggregator not in AGGREGATORS:
            bad("aggregator", f"must be one of {', '.join(AGGREGATORS)}")
        if not 0 <= self.beta <= 1:
            bad("beta", "must lie in [0, 1]")
        if self.aggregator == "multikrum":
            if self.multikrum_f < 0:
                bad("multikrum_f", "must be >= 0")
            if self.num_clients < self.multikrum_f + 3:
                bad("multikrum_f", f"Multi-Krum needs num_clients >= f + 3, got K={self.num_clients}, f={self.multikrum_f}")
            if self.multikrum_m is not None and not 1 <= self.multikrum_m <= self.num_clients - self.multikrum_f:
                bad("multikrum_m", f"must lie in [1, K - f] = [1, {self.num_clients - self.multikrum_f}]")
        clients = [f.client for f in self.flips]
        if len(set(clients)) != len(clients):
            bad("flips", "a client can only carry one flip")
        if len(clients) >= self.num_clients:
            bad("flips", "at least one client must stay benign")
        dominant = self.dominant_class_of()
        for f in self.flips:
            if not 0 <= f.client < self.num_clients:
                bad("flips", f"client {f.client} outside [0, {self.num_clients})")
            if not 0 <= f.target < self.num_classes:
                bad("flips", f"target class {f.target} outside [0, {self.num_classes})")
            source = dominant[f.client] if f.source is None else f.source
            if source != dominant[f.client]:
                bad("flips", f"client {f.client}: flip source {source} is not its dominant class {dominant[f.client]}")
            if source == f.target:
                bad("flips", f"client {f.client}: target equals source class {source}")


@dataclass(frozen=True, eq=False)
class Evaluation:
    loss: float
    accuracy: float
    class_accuracy: np.ndarray
    noise_accuracy: dict[float, float]


@dataclass(frozen=True, eq=False)
class RoundRecord:
    round: int
    test_loss: float
    accuracy: float
    class_accuracy: np.ndarray
    noise_accuracy: dict[float, float]
    client_losses: np.ndarray
    attention: Optional[agg.AttentionBreakdown] = None
    selected: Optional[tuple[int, ...]] = None
    duration: float = 0.0


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    records: list[RoundRecord] = field(default_factory=list)
    final_params: Optional[np.ndarray] = None

    @property
    def final_model(self) -> nn.MlpModel:
        return nn.unflatten(self.final_params, self.config.layer_sizes)

    @property
    def final(self) -> RoundRecord:
        return self.records[-1]


def evaluate(model: nn.MlpModel, test_set: LabeledDataset) -> Evaluation:
    """Loss, overall accuracy, per-class accuracy and accuracy per noise level."""
    if len(test_set) == 0:
        raise ConfigurationError("test set is empty")
    if test_set.dim != model.layer_sizes[0] or test_set.num_classes != model.num_classes:
        raise ConfigurationError(
            f"test set (d={test_set.dim}, M={test_set.num_classes}) does not fit model {list(model.layer_sizes)}"
        )
    probs = nn.forward(model, test_set.features)
    loss = nn.cross_entropy_loss(probs, test_set.labels)
    correct = np.argmax(probs, axis=1) == test_set.labels

    counts = np.bincount(test_set.labels, minlength=test_set.num_classes)
    hits = np.bincount(test_set.labels, weights=correct, minlength=test_set.num_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        class_acc = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    noise_acc = {
        float(level): float(correct[test_set.noise_level == level].mean())
        for level in np.unique(test_set.noise_level)
    }
    return Evaluation(loss, float(correct.mean()), class_acc, noise_acc)


def build_data(config: ExperimentConfig):
    """Clean train shards (one per client) and the held-out test set."""
    full = generate_synthetic(
        config.num_classes,
        config.dim,
        config.samples_per_class,
        config.noise_levels,
        seed=child_seed(config.seed, SEED_DATA),
        noise_scale=config.noise_scale,
    )
    train, test = train_test_split(full, config.test_fraction, child_seed(config.seed, SEED_SPLIT))
    shards = partition(train, config.partition_spec())
    return shards, test


def attack_wiring(config: ExperimentConfig, shards: list[LabeledDataset]) -> list[LabeledDataset]:
    """Shards each client actually trains on: malicious clients get theirs poisoned."""
    if len(shards) != config.num_clients:
        raise ConfigurationError(f"expected {config.num_clients} shards, got {len(shards)}")
    dominant = config.dominant_class_of()
    flips = config.poison_spec().flips
    out = []
    for k, shard in enumerate(shards):
        if k not in flips:
            out.append(shard)
            continue
        source, target = flips[k]
        if source != dominant[k]:
            raise ConfigurationError(
                f"client {k}: flip source {source} is not its dominant class {dominant[k]}"
            )
        out.append(poison(shard, (source, target)))
    return out


def local_train(global_params, config: ExperimentConfig, shard: LabeledDataset, rng) -> tuple[np.ndarray, float]:
    """Mini-batch SGD from the global vector; returns (params, loss on the shard)."""
    model = nn.unflatten(global_params, config.layer_sizes)
    n = len(shard)
    for _ in range(config.local_epochs):
        order = rng.permutation(n)
        # final partial batch is kept
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            grad = nn.backward(model, shard.features[idx], shard.labels[idx])
            if not np.all(np.isfinite(grad)):
                raise DivergenceError("non-finite gradient during local training")
            model = nn.sgd_step(model, grad, config.learning_rate)
    return nn.flatten(model), nn.loss(model, shard.features, shard.labels)


def default_workers() -> int:
    env = os.environ.get("FEDSHIELD_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigurationError(f"FEDSHIELD_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigurationError("FEDSHIELD_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _aggregate(config, global_params, updates):
    if config.aggregator in ("fedavg", "none"):
        return agg.fed_avg(updates), None, None
    if config.aggregator == "multikrum":
        chosen = agg.multi_krum_select(updates, config.multikrum_f, config.multikrum_m)
        return agg.multi_krum(updates, config.multikrum_f, config.multikrum_m), None, tuple(chosen)
    params, breakdown = agg.attention_aggregate(global_params, updates, config.beta)
    return params, breakdown, None


def run_experiment(
    config: ExperimentConfig,
    sink: Optional[Callable[[RoundRecord], None]] = None,
    workers: Optional[int] = None,
    data=None,
) -> ExperimentResult:
    """Train for ``config.rounds`` rounds and evaluate the global model after each.

    ``data`` may carry pre-built ``(clean_shards, test_set)`` so several runs can
    share one dataset; otherwise it is generated from the config seed.
    """
    workers = default_workers() if workers is None else workers
    shards, test = build_data(config) if data is None else data
    train_shards = attack_wiring(config, shards)
    global_params = nn.flatten(nn.init_model(config.layer_sizes, child_seed(config.seed, SEED_INIT)))
    limit = DIVERGENCE_FACTOR * math.log(config.num_classes)
    result = ExperimentResult(config)

    def client_job(k, t):
        # same stream for every client so identical shards give identical updates
        rng = np.random.default_rng([config.seed, SEED_SHUFFLE, t])
        params, loss = local_train(global_params, config, train_shards[k], rng)
        return agg.LocalUpdate(k, params, len(train_shards[k]), loss)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for t in range(config.rounds):
            started = time.perf_counter()
            try:
                if workers > 1:
                    updates = list(pool.map(lambda k: client_job(k, t), range(config.num_clients)))
                else:
                    updates = [client_job(k, t) for k in range(config.num_clients)]
                updates.sort(key=lambda u: u.client_id)
                global_params, breakdown, chosen = _aggregate(config, global_params, updates)
            except FedShieldError as exc:
                exc.args = (f"round {t}: {exc}",) + exc.args[1:]
                if isinstance(exc, DivergenceError):
                    exc.round_index = t
                raise
            ev = evaluate(nn.unflatten(global_params, config.layer_sizes), test)
            record = RoundRecord(
                round=t,
                test_loss=ev.loss,
                accuracy=ev.accuracy,
                class_accuracy=ev.class_accuracy,
                noise_accuracy=ev.noise_accuracy,
                client_losses=np.array([u.local_loss for u in updates]),
                attention=breakdown,
                selected=chosen,
                duration=time.perf_counter() - started,
            )
            result.records.append(record)
            if sink is not None:
                sink(record)
            if not math.isfinite(ev.loss) or ev.loss > limit:
                raise DivergenceError(
                    f"round {t}: global test loss {ev.loss:.6g} exceeds {DIVERGENCE_FACTOR:g} * ln(M) = {limit:.6g}",
                    round_index=t,
                )
    result.final_params = global_params
    return result


# Attack wiring mirroring the paper's experiments: first one, then two
# malicious clients with different dominant classes flipped to a common target.
ONE_ATTACKER = (Flip(client=1, target=0),)
TWO_ATTACKERS = (Flip(client=1, target=0), Flip(client=2, target=0))

# Paper values where given (K=11, batch 32, beta 0.75); learning rate and
# data noise are sized so 40 rounds of plain SGD actually train the MLP.
DESK_PRESET = dict(
    num_clients=11,
    num_classes=5,
    dim=16,
    hidden_sizes=(32,),
    samples_per_class=1000,
    noise_scale=1.5,
    batch_size=32,
    learning_rate=0.05,
    local_epochs=1,
    beta=0.75,
)


def desk_config(rounds: int = 40, **overrides) -> ExperimentConfig:
    """Desk-scale experiment: 11 clients, 5 classes, 5000 samples, one hidden layer."""
    return ExperimentConfig(rounds=rounds, **{**DESK_PRESET, **overrides})
