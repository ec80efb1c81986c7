"""Gradient-domain compositing: paste a generated clip into a destination
image by solving the discrete Poisson equation inside a mask.

Interior pixels satisfy a 4-neighbor Laplacian equation whose right-hand
side carries the source gradients, with the destination supplying Dirichlet
boundary values. Channels are independent; the system is solved with plain
conjugate gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, ParameterError, SolverError, ValidationError


@dataclass
class SolverConfig:
    tolerance: float = 1e-8      # relative residual target
    max_iterations: int = 10000

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ParameterError("tolerance must be positive")


@dataclass
class BlendProblem:
    source: np.ndarray        # (C, H, W) or (H, W), values in [0, 1]
    destination: np.ndarray   # same shape as source
    mask: np.ndarray          # (H, W) boolean interior

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        self.destination = np.asarray(self.destination, dtype=np.float64)
        mask = np.asarray(self.mask)
        if mask.dtype != np.bool_:
            uniq = np.unique(mask)
            if not np.all(np.isin(uniq, (0, 1))):
                raise ValidationError("mask must be binary")
            mask = mask.astype(bool)
        self.mask = mask
        if self.source.shape != self.destination.shape:
            raise DimensionError("source and destination shapes differ")
        if self.source.ndim == 2:
            self.source = self.source[None]
            self.destination = self.destination[None]
        if self.source.ndim != 3:
            raise DimensionError("images must be (C, H, W) or (H, W)")
        if self.mask.shape != self.source.shape[1:]:
            raise DimensionError("mask shape must match image spatial dims")
        if self.mask.any():
            if (self.mask[0].any() or self.mask[-1].any()
                    or self.mask[:, 0].any() or self.mask[:, -1].any()):
                raise ValidationError("mask touches the image border; a boundary ring is required")


def cg_solve(apply_a: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
             cfg: Optional[SolverConfig] = None) -> np.ndarray:
    """Conjugate gradients for a symmetric positive definite operator.

    Stops when ||Ax - b|| <= tolerance * ||b||; raises SolverError carrying
    the final residual when the iteration budget runs out.
    """
    cfg = cfg or SolverConfig()
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return x
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    target = cfg.tolerance * norm_b
    for _ in range(cfg.max_iterations):
        if np.sqrt(rs) <= target:
            return x
        ap = apply_a(p)
        alpha = rs / float(p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) <= target:
        return x
    raise SolverError(
        f"conjugate gradients did not reach {cfg.tolerance:g} relative residual "
        f"in {cfg.max_iterations} iterations", residual=float(np.sqrt(rs) / norm_b))


def _laplacian_rhs(src: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """4 * src - sum of neighbors, evaluated at interior pixels."""
    lap = 4.0 * src[1:-1, 1:-1] - src[:-2, 1:-1] - src[2:, 1:-1] - src[1:-1, :-2] - src[1:-1, 2:]
    full = np.zeros_like(src)
    full[1:-1, 1:-1] = lap
    return full[mask]


def poisson_blend(problem: BlendProblem, cfg: Optional[SolverConfig] = None) -> np.ndarray:
    """Seamless cloning of the masked source region into the destination.

    Pixels outside the mask are the destination unchanged; inside, the
    solution is clamped to [0, 1] after solving.
    """
    cfg = cfg or SolverConfig()
    mask = problem.mask
    if not mask.any():
        return problem.destination.copy()

    h, w = mask.shape
    idx = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(mask)
    idx[ys, xs] = np.arange(ys.size)

    # neighbor bookkeeping: for each unknown, which neighbors are unknowns
    # themselves and which contribute destination boundary values
    neighbor_ids = []
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        neighbor_ids.append(idx[ys + dy, xs + dx])
    neighbor_ids = np.stack(neighbor_ids, axis=0)          # (4, n)
    inside = neighbor_ids >= 0
    safe_ids = np.where(inside, neighbor_ids, 0)

    def apply_a(vec: np.ndarray) -> np.ndarray:
        gathered = np.where(inside, vec[safe_ids], 0.0)
        return 4.0 * vec - gathered.sum(axis=0)

    out = problem.destination.copy()
    for ch in range(problem.source.shape[0]):
        src = problem.source[ch]
        dst = problem.destination[ch]
        b = _laplacian_rhs(src, mask)
        for k, (dy, dx) in enumerate(((-1, 0), (1, 0), (0, -1), (0, 1))):
            boundary = ~inside[k]
            b = b + np.where(boundary, dst[ys + dy, xs + dx], 0.0)
        sol = cg_solve(apply_a, b, cfg)
        out[ch][mask] = np.clip(sol, 0.0, 1.0)
    return out
