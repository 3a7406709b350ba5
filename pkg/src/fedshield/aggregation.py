"""Global aggregation rules: FedAvg, Multi-Krum and dual-attention weighting.

The dual-attention rule weights each client by two attention scores:

* self attention: cosine similarity between every pair of client vectors,
  z-scored over the off-diagonal entries, row softmax (the diagonal is
  masked with -inf), then column sums renormalised to a simplex;
* temporal attention: cosine similarity between the previous global vector
  and each client vector, z-scored, then softmax.

The two are mixed as ``beta * self + (1 - beta) * temporal`` and the new
global vector is the weighted sum of client vectors.

Sums over clients go through ``math.fsum`` so results are independent of
client order down to the last bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateVectorError

NORM_FLOOR = 1e-12
SIGMA_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class LocalUpdate:
    client_id: int
    params: np.ndarray
    num_samples: int
    local_loss: float = float("nan")

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64)
        if p.ndim != 1:
            raise ConfigurationError(f"client {self.client_id}: params must be a 1-d vector")
        if not np.all(np.isfinite(p)):
            raise ConfigurationError(f"client {self.client_id}: params contain NaN or Inf")
        if self.num_samples < 1:
            raise ConfigurationError(f"client {self.client_id}: num_samples must be >= 1")
        object.__setattr__(self, "params", p)


@dataclass(frozen=True, eq=False)
class AttentionBreakdown:
    eta_self: np.ndarray
    eta_temporal: np.ndarray
    eta_combined: np.ndarray
    self_matrix: np.ndarray
    beta: float


def _stack(updates) -> np.ndarray:
    if len(updates) == 0:
        raise ConfigurationError("no updates to aggregate")
    lengths = {u.params.size for u in updates}
    if len(lengths) != 1:
        raise ConfigurationError(f"updates disagree on parameter length: {sorted(lengths)}")
    return np.stack([u.params for u in updates])


def _column_fsum(matrix: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(col) for col in matrix.T], dtype=np.float64)


def _column_mean(matrix: np.ndarray) -> np.ndarray:
    """Column means with one refinement step, so the result is (near) correctly rounded."""
    n = matrix.shape[0]
    out = np.empty(matrix.shape[1])
    for j, col in enumerate(matrix.T):
        mean = math.fsum(col) / n
        residual = math.fsum([*col, *([-mean] * n)])
        out[j] = mean + residual / n
    return out


def fed_avg(updates: Sequence[LocalUpdate]) -> np.ndarray:
    """Uniform mean of the client vectors (not weighted by sample counts)."""
    return _column_mean(_stack(updates))


def weighted_sum(weights, updates: Sequence[LocalUpdate]) -> np.ndarray:
    stack = _stack(updates)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (stack.shape[0],):
        raise ConfigurationError(f"need {stack.shape[0]} weights, got shape {w.shape}")
    return _column_fsum(w[:, None] * stack)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise DegenerateVectorError(f"cannot take the direction of a vector with norm {min(na, nb):.3g}")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def self_attention_matrix(updates: Sequence[LocalUpdate]) -> np.ndarray:
    """Pairwise cosine similarities with a -inf diagonal."""
    stack = _stack(updates)
    k = stack.shape[0]
    if k < 2:
        raise ConfigurationError("self attention needs at least 2 clients")
    norms = np.linalg.norm(stack, axis=1)
    bad = np.flatnonzero(norms < NORM_FLOOR)
    if bad.size:
        cid = updates[int(bad[0])].client_id
        raise DegenerateVectorError(f"client {cid} sent a vector with norm {norms[bad[0]]:.3g}")
    unit = stack / norms[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    sim = (sim + sim.T) / 2.0
    np.fill_diagonal(sim, -np.inf)
    return sim


def zscore_normalize(values) -> np.ndarray:
    """Standardise the finite entries; -inf entries are passed through.

    Mean and (population) standard deviation are taken over finite entries
    only. A spread below 1e-12 maps every finite entry to 0.
    """
    x = np.array(values, dtype=np.float64)
    finite = np.isfinite(x)
    if np.any(np.isposinf(x) | np.isnan(x)):
        raise ConfigurationError("only -inf is allowed as a non-finite sentinel")
    vals = x[finite]
    if vals.size < 2:
        raise ConfigurationError(f"z-score needs at least 2 finite entries, got {vals.size}")
    mu = vals.mean()
    sigma = vals.std()
    x[finite] = 0.0 if sigma < SIGMA_FLOOR else (vals - mu) / sigma
    return x


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    finite = np.isfinite(z)
    if not np.any(finite):
        raise ConfigurationError("softmax over all -inf entries is undefined")
    e = np.where(finite, np.exp(np.where(finite, z - z[finite].max(), 0.0)), 0.0)
    return e / math.fsum(e)


def row_softmax(matrix) -> np.ndarray:
    """Row-wise softmax; -inf entries get exactly 0."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ConfigurationError("row_softmax expects a matrix")
    out = np.empty_like(m)
    for i, row in enumerate(m):
        if not np.any(np.isfinite(row)):
            raise ConfigurationError(f"row {i} has no finite entries")
        out[i] = softmax(row)
    return out


def column_reduce(matrix) -> np.ndarray:
    """Attention each client receives: column sums divided by the grand total."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigurationError(f"expected a square matrix, got shape {m.shape}")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ConfigurationError("attention matrix must be finite and non-negative")
    cols = _column_fsum(m)
    total = math.fsum(cols)
    if total <= 0:
        raise ConfigurationError("attention matrix sums to zero")
    return cols / total


def temporal_attention(global_prev, updates: Sequence[LocalUpdate]) -> np.ndarray:
    """Attention the previous global vector casts on each client vector."""
    stack = _stack(updates)
    g = np.asarray(global_prev, dtype=np.float64)
    if g.shape != (stack.shape[1],):
        raise ConfigurationError(f"global vector has length {g.size}, updates have {stack.shape[1]}")
    sims = np.array([cosine_similarity(g, row) for row in stack])
    return softmax(zscore_normalize(sims))


def combine_attention(eta_self, eta_temporal, beta: float) -> np.ndarray:
    a = np.asarray(eta_self, dtype=np.float64)
    b = np.asarray(eta_temporal, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"attention vectors differ in shape: {a.shape} vs {b.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ConfigurationError(f"beta must lie in [0, 1], got {beta}")
    return beta * a + (1.0 - beta) * b


def attention_weights(global_prev, updates: Sequence[LocalUpdate], beta: float) -> AttentionBreakdown:
    if len(updates) < 2:
        raise ConfigurationError("attention aggregation needs at least 2 clients")
    self_matrix = row_softmax(zscore_normalize(self_attention_matrix(updates)))
    eta1 = column_reduce(self_matrix)
    eta2 = temporal_attention(global_prev, updates)
    eta = combine_attention(eta1, eta2, beta)
    return AttentionBreakdown(eta1, eta2, eta, self_matrix, float(beta))


def attention_aggregate(global_prev, updates: Sequence[LocalUpdate], beta: float = 0.75):
    """Dual-attention weighted sum of client vectors.

    Returns ``(new_global, breakdown)``.
    """
    breakdown = attention_weights(global_prev, updates, beta)
    return weighted_sum(breakdown.eta_combined, updates), breakdown


def krum_scores(updates: Sequence[LocalUpdate], num_attackers: int) -> np.ndarray:
    """Sum of squared distances from each update to its K - f - 2 nearest neighbours."""
    stack = _stack(updates)
    k = stack.shape[0]
    if num_attackers < 0:
        raise ConfigurationError("number of attackers must be >= 0")
    if k < num_attackers + 3:
        raise ConfigurationError(
            f"Multi-Krum needs K >= f + 3 clients, got K={k}, f={num_attackers}"
        )
    diff = stack[:, None, :] - stack[None, :, :]
    dist2 = np.einsum("ijk,ijk->ij", diff, diff)
    n_near = k - num_attackers - 2
    scores = np.empty(k)
    for i in range(k):
        others = np.sort(np.delete(dist2[i], i))
        scores[i] = math.fsum(others[:n_near])
    return scores


def multi_krum_select(updates: Sequence[LocalUpdate], num_attackers: int, num_selected: int | None = None):
    """Indices of the ``m`` lowest-scoring updates; ties go to the lower client id."""
    k = len(updates)
    m = k - num_attackers if num_selected is None else num_selected
    scores = krum_scores(updates, num_attackers)
    if not 1 <= m <= k - num_attackers:
        raise ConfigurationError(f"Multi-Krum selection size must lie in [1, K - f] = [1, {k - num_attackers}], got {m}")
    ids = np.array([u.client_id for u in updates])
    order = np.lexsort((ids, scores))
    return sorted(int(i) for i in order[:m])


def multi_krum(updates: Sequence[LocalUpdate], num_attackers: int, num_selected: int | None = None) -> np.ndarray:
    """Average of the updates Multi-Krum keeps. ``num_selected`` defaults to K - f."""
    chosen = multi_krum_select(updates, num_attackers, num_selected)
    return _column_mean(_stack(updates)[chosen])
