"""Single-view NMF and regularized multi-view co-factorization.

Every view V(s) (m items x n_s features) is factorized as W(s) H(s) with
multiplicative updates on the squared Frobenius objective

    J = sum_s lambda_s ||V(s) - W(s) H(s)||^2
        + sum_{s<t} lambda_st ||W(s) - W(t)||^2

Each unordered view pair is counted once. Items are clustered by the argmax of
the lambda_s-weighted average of the W(s) rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ppsr.errors import ConfigError, DataError, DimensionError
from ppsr.events import track_event
from ppsr.matrixfile import atomic_write_text, format_rows, parse_rows

logger = logging.getLogger(__name__)

FACTOR_MAGIC = "# ppsr-factor-model v1"

SweepCallback = Callable[[int, Sequence[np.ndarray], Sequence[np.ndarray], float], None]


class MultiViewConfig(BaseModel):
    """Hyperparameters of the co-factorization.

    ``lambda_view`` defaults to 1 for every view and ``lambda_pair`` to 0.1 off
    the diagonal; both are sized to the number of views at solve time.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    K: int = Field(3, gt=0)
    lambda_view: Optional[list[float]] = None
    lambda_pair: Optional[list[list[float]]] = None
    max_iters: int = Field(300, gt=0)
    rel_tol: float = Field(1e-5, gt=0)
    seed: int = Field(0, ge=0, lt=2**64)
    epsilon: float = Field(1e-12, gt=0)

    @field_validator("lambda_view")
    @classmethod
    def _check_view_weights(cls, v):
        if v is not None and any(w < 0 for w in v):
            raise ValueError("lambda_view entries must be non-negative")
        return v

    @field_validator("lambda_pair")
    @classmethod
    def _check_pair_weights(cls, v):
        if v is None:
            return v
        arr = np.asarray(v, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("lambda_pair must be a square matrix")
        if (arr < 0).any():
            raise ValueError("lambda_pair entries must be non-negative")
        if not np.array_equal(arr, arr.T):
            raise ValueError("lambda_pair must be symmetric")
        if np.any(np.diag(arr) != 0):
            raise ValueError("lambda_pair diagonal must be zero")
        return v

    def view_weights(self, n_views: int) -> np.ndarray:
        if self.lambda_view is None:
            return np.ones(n_views)
        if len(self.lambda_view) != n_views:
            raise DimensionError(
                f"lambda_view has {len(self.lambda_view)} entries for {n_views} views"
            )
        return np.asarray(self.lambda_view, dtype=float)

    def pair_weights(self, n_views: int) -> np.ndarray:
        if self.lambda_pair is None:
            pair = np.full((n_views, n_views), 0.1)
            np.fill_diagonal(pair, 0.0)
            return pair
        pair = np.asarray(self.lambda_pair, dtype=float)
        if pair.shape != (n_views, n_views):
            raise DimensionError(f"lambda_pair is {pair.shape} for {n_views} views")
        return pair


@dataclass(frozen=True)
class ViewMatrix:
    """One non-negative m x n_s view of the item set."""

    data: np.ndarray
    view_id: int = 1

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 2:
            raise DimensionError(f"view {self.view_id}: expected a 2-D matrix")
        m, n = data.shape
        if m < 1 or n < 1:
            raise DataError(f"view {self.view_id}: empty matrix of shape {data.shape}")
        if not np.isfinite(data).all():
            raise DataError(f"view {self.view_id}: non-finite entries")
        if (data < 0).any():
            raise DataError(f"view {self.view_id}: negative entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def _as_view(V, view_id: int = 1) -> ViewMatrix:
    return V if isinstance(V, ViewMatrix) else ViewMatrix(V, view_id)


def normalize_view(V: ViewMatrix) -> ViewMatrix:
    """Scale a view to unit Frobenius norm (zero views are returned as is)."""
    norm = np.linalg.norm(V.data)
    if norm == 0:
        return V
    return ViewMatrix(V.data / norm, V.view_id)


@dataclass(frozen=True)
class FactorModel:
    W: tuple[np.ndarray, ...]
    H: tuple[np.ndarray, ...]
    K: int
    objective_trace: tuple[float, ...]
    assignment: np.ndarray
    lambda_view: np.ndarray

    @property
    def n_views(self) -> int:
        return len(self.W)

    @property
    def n_items(self) -> int:
        return self.W[0].shape[0]

    @property
    def iterations(self) -> int:
        return len(self.objective_trace)

    def consensus(self) -> np.ndarray:
        return consensus_matrix(self.W, self.lambda_view)

    def save(self, path: Path | str) -> None:
        """Write the documented text layout (header, factors, assignment)."""
        lines = [FACTOR_MAGIC, f"m {self.n_items} K {self.K} n_v {self.n_views}"]
        for s, (W, H) in enumerate(zip(self.W, self.H), start=1):
            lines.append(f"view {s} n {H.shape[1]}")
            lines.append("W")
            lines.extend(format_rows(W))
            lines.append("H")
            lines.extend(format_rows(H))
        lines.append("lambda\t" + "\t".join(repr(float(x)) for x in self.lambda_view))
        lines.append("trace\t" + "\t".join(repr(float(x)) for x in self.objective_trace))
        lines.append("assignment\t" + "\t".join(str(int(a)) for a in self.assignment))
        atomic_write_text(path, "\n".join(lines) + "\n")


def load_factor_model(path: Path | str) -> FactorModel:
    lines = iter(Path(path).read_text(encoding="utf-8").splitlines())
    if next(lines, None) != FACTOR_MAGIC:
        raise DataError(f"{path}: not a factor model file")
    try:
        _, m, _, K, _, n_v = next(lines).split()
        m, K, n_v = int(m), int(K), int(n_v)
        Ws, Hs = [], []
        for _ in range(n_v):
            _, _, _, n = next(lines).split()
            next(lines)
            Ws.append(parse_rows(lines, m, K))
            next(lines)
            Hs.append(parse_rows(lines, K, int(n)))
        tail = {}
        for line in lines:
            key, *values = line.split("\t")
            tail[key] = values
    except (StopIteration, ValueError):
        raise DataError(f"{path}: truncated or malformed factor model") from None
    return _freeze_model(
        Ws,
        Hs,
        K,
        [float(x) for x in tail.get("trace", [])],
        np.array([int(a) for a in tail.get("assignment", [])], dtype=np.int64),
        np.array([float(x) for x in tail.get("lambda", [])]),
    )


def _freeze_model(Ws, Hs, K, trace, assignment, lambda_view) -> FactorModel:
    for arr in (*Ws, *Hs, assignment, lambda_view):
        arr.setflags(write=False)
    return FactorModel(
        W=tuple(Ws),
        H=tuple(Hs),
        K=K,
        objective_trace=tuple(trace),
        assignment=assignment,
        lambda_view=lambda_view,
    )


def objective(
    views: Sequence[np.ndarray],
    W: Sequence[np.ndarray],
    H: Sequence[np.ndarray],
    lambda_view: np.ndarray,
    lambda_pair: np.ndarray,
) -> float:
    """Full objective J with squared Frobenius norms, unordered pairs once."""
    total = 0.0
    for s, V in enumerate(views):
        total += lambda_view[s] * float(np.sum((V - W[s] @ H[s]) ** 2))
    n_v = len(views)
    for s in range(n_v):
        for t in range(s + 1, n_v):
            if lambda_pair[s, t]:
                total += lambda_pair[s, t] * float(np.sum((W[s] - W[t]) ** 2))
    return total


def _random_init(views, K: int, seed: int):
    rng = np.random.default_rng(seed)
    Ws, Hs = [], []
    for V in views:
        m, n = V.shape
        scale = np.sqrt(V.mean() / K)
        Ws.append(rng.random((m, K)) * scale)
        Hs.append(rng.random((K, n)) * scale)
    return Ws, Hs


def _check_init(init, shapes, whom):
    out = []
    for arr, shape in zip(init, shapes):
        arr = np.array(arr, dtype=float)
        if arr.shape != shape:
            raise DimensionError(f"{whom} has shape {arr.shape}, expected {shape}")
        if (arr < 0).any():
            raise DataError(f"{whom} has negative entries")
        out.append(arr)
    if len(out) != len(shapes):
        raise DimensionError(f"{whom} needs one matrix per view")
    return out


def _co_factorize(
    views: Sequence[np.ndarray],
    K: int,
    lambda_view: np.ndarray,
    lambda_pair: np.ndarray,
    config: MultiViewConfig,
    init_W=None,
    init_H=None,
    callback: Optional[SweepCallback] = None,
) -> FactorModel:
    m = views[0].shape[0]
    if init_W is None or init_H is None:
        W, H = _random_init(views, K, config.seed)
    else:
        W = _check_init(init_W, [(m, K)] * len(views), "init_W")
        H = _check_init(init_H, [(K, V.shape[1]) for V in views], "init_H")

    eps = config.epsilon
    n_v = len(views)
    trace: list[float] = []
    prev = objective(views, W, H, lambda_view, lambda_pair)

    for it in range(config.max_iters):
        for s, V in enumerate(views):
            H[s] = H[s] * (W[s].T @ V) / (W[s].T @ W[s] @ H[s] + eps)

        # Gauss-Seidel: W(s) reads this sweep's H(s) and the freshest W(t).
        for s, V in enumerate(views):
            numer = lambda_view[s] * (V @ H[s].T)
            denom = lambda_view[s] * (W[s] @ (H[s] @ H[s].T))
            for t in range(n_v):
                if t != s and lambda_pair[s, t]:
                    numer = numer + lambda_pair[s, t] * W[t]
                    denom = denom + lambda_pair[s, t] * W[s]
            W[s] = W[s] * numer / (denom + eps)

        J = objective(views, W, H, lambda_view, lambda_pair)
        trace.append(J)
        if callback is not None:
            callback(it, W, H, J)
        if prev == 0 or (prev - J) / prev < config.rel_tol:
            break
        prev = J
    else:
        logger.debug("stopped after max_iters=%d without meeting rel_tol", config.max_iters)

    assignment = consensus_matrix(W, lambda_view).argmax(axis=1).astype(np.int64)
    track_event(
        "factorization_finished",
        level=logging.DEBUG,
        views=n_v,
        K=K,
        iterations=len(trace),
        objective=trace[-1] if trace else prev,
    )
    return _freeze_model(W, H, K, trace, assignment, np.array(lambda_view, dtype=float))


def nmf_factorize(
    V,
    K: int,
    config: Optional[MultiViewConfig] = None,
    init_W=None,
    init_H=None,
    callback: Optional[SweepCallback] = None,
) -> FactorModel:
    """Factorize one view with the plain multiplicative rules.

    The view is used as given. :func:`multiview_factorize` scales every view to
    unit Frobenius norm first, so the two agree only on a view that is already
    normalized (see :func:`normalize_view`).
    """
    config = config or MultiViewConfig(K=K)
    V = _as_view(V)
    if K <= 0:
        raise DimensionError("K must be positive")
    m, n = V.shape
    if K > min(m, n):
        raise DimensionError(f"K={K} exceeds min(m, n)={min(m, n)}")
    return _co_factorize(
        [V.data],
        K,
        np.ones(1),
        np.zeros((1, 1)),
        config,
        init_W=None if init_W is None else [init_W],
        init_H=None if init_H is None else [init_H],
        callback=callback,
    )


def multiview_factorize(
    views: Sequence,
    config: Optional[MultiViewConfig] = None,
    init_W=None,
    init_H=None,
    callback: Optional[SweepCallback] = None,
) -> FactorModel:
    """Regularized co-factorization of all views.

    Views are normalized to unit Frobenius norm, H updates run for every view,
    then W updates, until the relative decrease of J drops below ``rel_tol``.
    """
    config = config or MultiViewConfig()
    if not views:
        raise DimensionError("at least one view is required")
    views = [normalize_view(_as_view(V, s)) for s, V in enumerate(views, start=1)]
    m = views[0].shape[0]
    for V in views[1:]:
        if V.shape[0] != m:
            raise DimensionError(
                f"view {V.view_id} has {V.shape[0]} items, view 1 has {m}"
            )
    if config.K > m:
        raise DimensionError(f"K={config.K} exceeds the number of items {m}")

    n_v = len(views)
    model = _co_factorize(
        [V.data for V in views],
        config.K,
        config.view_weights(n_v),
        config.pair_weights(n_v),
        config,
        init_W=init_W,
        init_H=init_H,
        callback=callback,
    )
    track_event(
        "factorization_converged",
        views=n_v,
        items=m,
        K=config.K,
        iterations=model.iterations,
        objective=model.objective_trace[-1] if model.objective_trace else 0.0,
    )
    return model


def consensus_matrix(W: Sequence[np.ndarray], lambda_view) -> np.ndarray:
    weights = np.asarray(lambda_view, dtype=float)
    if len(weights) != len(W):
        raise DimensionError(f"{len(weights)} weights for {len(W)} views")
    total = weights.sum()
    if total <= 0:
        raise ConfigError("at least one view weight must be positive")
    acc = np.zeros_like(W[0], dtype=float)
    for w, Ws in zip(weights, W):
        acc = acc + w * Ws
    return acc / total


def assign_clusters(model: FactorModel, lambda_view=None) -> np.ndarray:
    """Argmax of the weighted consensus rows; ties go to the lowest cluster."""
    if model.n_views < 1:
        raise DimensionError("model has no view factors")
    weights = model.lambda_view if lambda_view is None else lambda_view
    return consensus_matrix(model.W, weights).argmax(axis=1).astype(np.int64)


def nearest_neighbors(assignment, item: int) -> set[int]:
    """Items sharing ``item``'s cluster, excluding ``item`` itself."""
    assignment = np.asarray(assignment)
    if not 0 <= item < len(assignment):
        raise IndexError(f"item {item} out of range for {len(assignment)} items")
    same = np.flatnonzero(assignment == assignment[item])
    return {int(i) for i in same if i != item}
