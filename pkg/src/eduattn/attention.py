"""Sparsemax and softmax normalisers, plus a brute-force projection oracle."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from eduattn import kernels
from eduattn.errors import DimensionError, NumericError, ScaleError
from eduattn.tensor import Tensor, _make, as_tensor


@dataclass(frozen=True)
class AttentionVector:
    scores: np.ndarray

    @property
    def support(self) -> frozenset:
        return frozenset(np.flatnonzero(self.scores > 0).tolist())

    def __len__(self) -> int:
        return len(self.scores)


def _vector(z) -> np.ndarray:
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise DimensionError(f"expected a non-empty vector, got shape {z.shape}")
    if not np.isfinite(z).all():
        raise NumericError("non-finite attention scores")
    return z


def sparsemax(z) -> AttentionVector:
    """Euclidean projection of ``z`` onto the probability simplex.

    Uses the sort/threshold rule: sort descending, keep the largest prefix
    ``k`` with ``1 + k * z_(k) > sum_{j<=k} z_(j)``, subtract
    ``tau = (sum_{j<=k} z_(j) - 1) / k`` and clip at zero.
    """
    z = _vector(z)
    srt = np.sort(z, kind="stable")[::-1]
    csum = np.cumsum(srt)
    ks = np.arange(1, z.size + 1)
    k = int(np.count_nonzero(1.0 + ks * srt > csum))
    tau = (csum[k - 1] - 1.0) / k
    return AttentionVector(np.maximum(z - tau, 0.0))


def simplex_project_oracle(z) -> AttentionVector:
    """Projection onto the simplex by enumerating every candidate support.

    On a fixed support S the equality-constrained minimiser is
    ``p_S = z_S - (sum(z_S) - 1) / |S|``; the best feasible candidate wins.
    Exponential in n, so test-scale only.
    """
    z = _vector(z)
    n = z.size
    if n > 10:
        raise ScaleError(f"oracle enumerates 2^n supports; n={n} exceeds 10")
    best, best_obj = None, np.inf
    for r in range(1, n + 1):
        for supp in itertools.combinations(range(n), r):
            idx = list(supp)
            p = np.zeros(n)
            p[idx] = z[idx] - (z[idx].sum() - 1.0) / r
            if (p[idx] < 0).any():
                continue
            obj = float(((p - z) ** 2).sum())
            if obj < best_obj:
                best, best_obj = p, obj
    return AttentionVector(best)


def softmax(z) -> np.ndarray:
    z = _vector(z)
    e = np.exp(z - z.max())
    return e / e.sum()


def masked_sparsemax(x: Tensor, mask=None) -> Tensor:
    """Differentiable sparsemax over the last axis of ``x``.

    Positions where ``mask`` is 0 are left out of the projection and come
    back as exact zeros. Every row must keep at least one valid position.
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"sparsemax needs a non-empty last axis, got {x.shape}")
    if not np.isfinite(x.data).all():
        raise NumericError("non-finite attention scores")
    n = x.shape[-1]
    if mask is None:
        mask2 = np.ones((x.size // n, n), dtype=np.uint8)
    else:
        mask = np.asarray(mask)
        mask2 = np.broadcast_to(mask, x.shape).reshape(-1, n).astype(np.uint8)
        if not mask2.any(axis=1).all():
            raise DimensionError("sparsemax: a row has every position masked")
    p = kernels.sparsemax_rows(x.data.reshape(-1, n), mask2)
    out = _make(p.reshape(x.shape), (x,), "sparsemax")
    if out.requires_grad:
        def _backward():
            g = kernels.sparsemax_rows_backward(p, out.grad.reshape(-1, n))
            x._accum(g.reshape(x.shape))
        out._backward = _backward
    return out
