"""
Smoothing kernels on [-1, 1] and the integral functionals used by the
asymptotic theory of the local linear estimator.

All integrals use composite Simpson quadrature split at the kernel's
knots (points where the kernel or its derivative is not smooth), so
piecewise polynomial kernels are integrated exactly up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from tvreg.exceptions import DomainError, KernelError

__all__ = [
    "Kernel",
    "KernelConstants",
    "epanechnikov",
    "bartlett",
    "custom_kernel",
    "get_kernel",
    "kernel_eval",
    "kstar_eval",
    "kernel_constants",
    "DEFAULT_QUAD",
]

DEFAULT_QUAD = 2048


@dataclass(frozen=True, eq=False)
class Kernel:
    """
    Symmetric, bounded kernel supported on [-1, 1].

    Parameters
    ----------
    name : str
        Identifier used in reports and on the command line.
    func : callable
        Vectorized evaluator on [-1, 1]. Values outside the support are
        masked to zero by :meth:`__call__`, so ``func`` need not do it.
    knots : tuple of float
        Interior points of [-1, 1] where the kernel is not smooth. The
        endpoints are always added.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    knots: tuple[float, ...] = ()

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        out = np.where(np.abs(v) <= 1.0, self.func(np.clip(v, -1.0, 1.0)), 0.0)
        return out if out.ndim else float(out)

    @property
    def all_knots(self) -> np.ndarray:
        return np.unique(np.r_[-1.0, np.asarray(self.knots, dtype=float), 1.0])

    def constants(self, quad: int = DEFAULT_QUAD) -> "KernelConstants":
        return kernel_constants(self, quad)


@dataclass(frozen=True)
class KernelConstants:
    """Integral functionals of a kernel.

    ``kappa2`` is the second moment, ``K2`` the integral of the squared
    kernel, ``KstarAt0`` the self-convolution functional at zero (equal to
    ``K2``) and ``Kstar2`` the integral of its square.
    """

    kappa2: float
    K2: float
    KstarAt0: float
    Kstar2: float
    quadrature_points: int


def _epanechnikov(v):
    return 0.75 * (1.0 - v * v)


def _bartlett(v):
    return 1.0 - np.abs(v)


epanechnikov = Kernel("epanechnikov", _epanechnikov)
bartlett = Kernel("bartlett", _bartlett, knots=(0.0,))

_BUILTIN = {"epanechnikov": epanechnikov, "bartlett": bartlett}


def get_kernel(name: str) -> Kernel:
    try:
        return _BUILTIN[name.lower()]
    except KeyError:
        raise KernelError(
            f"unknown kernel {name!r}; choose one of {sorted(_BUILTIN)}"
        ) from None


def _simpson_pieces(f, edges: np.ndarray, panels: int) -> float:
    """Composite Simpson over consecutive ``edges``; ``panels`` split by length."""
    edges = np.asarray(edges, dtype=float)
    lengths = np.diff(edges)
    total = lengths.sum()
    if total <= 0.0:
        return 0.0
    result = 0.0
    for lo, length in zip(edges[:-1], lengths):
        if length <= 0.0:
            continue
        m = max(2, int(round(panels * length / total)))
        m += m % 2
        x = np.linspace(lo, lo + length, m + 1)
        w = np.ones(m + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        result += length / (3.0 * m) * float(w @ f(x))
    return result


def _simpson_rule(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on [0, 1] and weights for composite Simpson with ``m`` panels."""
    x = np.linspace(0.0, 1.0, m + 1)
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w / (3.0 * m)


def _kstar_many(kernel: Kernel, xs: np.ndarray, quad: int) -> np.ndarray:
    """Vectorized K* over an array of points with |x| <= 1."""
    shift = 2.0 * np.abs(np.asarray(xs, dtype=float))[:, None]
    knots = kernel.all_knots[None, :]
    upper = 1.0 - shift
    # Integrand K(v) K(v + shift) kinks at knots and knots - shift.
    cand = np.concatenate(
        [knots - shift, np.broadcast_to(knots, (shift.shape[0], knots.shape[1])), upper],
        axis=1,
    )
    edges = np.sort(np.clip(cand, -1.0, np.maximum(upper, -1.0)), axis=1)
    lo, length = edges[:, :-1], np.diff(edges, axis=1)
    m = max(2, quad // lo.shape[1])
    m += m % 2
    nodes, weights = _simpson_rule(m)
    v = lo[:, :, None] + length[:, :, None] * nodes
    vals = kernel(v) * kernel(v + shift[:, :, None])
    return np.einsum("xpk,k,xp->x", vals, weights, length)


def kernel_eval(kernel: Kernel, v):
    """Evaluate ``kernel`` at ``v``; zero outside [-1, 1]."""
    return kernel(v)


def kstar_eval(kernel: Kernel, x: float, quad: int = DEFAULT_QUAD) -> float:
    r"""
    Self-convolution functional

    .. math:: K^*(x) = \int_{-1}^{1-2|x|} K(v) K(v + 2|x|)\,dv

    Raises
    ------
    DomainError
        If ``|x| > 1``.
    """
    x = float(x)
    if abs(x) > 1.0:
        raise DomainError(f"K* is defined on [-1, 1], got x={x}")
    return float(_kstar_many(kernel, np.array([x]), quad)[0])


def _outer_edges(kernel: Kernel) -> np.ndarray:
    knots = kernel.all_knots
    half_gaps = np.abs(knots[:, None] - knots[None, :]).ravel() / 2.0
    pts = np.r_[0.0, half_gaps, -half_gaps]
    pts = pts[(pts >= -1.0) & (pts <= 1.0)]
    return np.unique(np.r_[-1.0, pts, 1.0])


@lru_cache(maxsize=64)
def _constants_cached(kernel: Kernel, quad: int) -> KernelConstants:
    edges = kernel.all_knots
    kappa2 = _simpson_pieces(lambda v: v * v * kernel(v), edges, quad)
    K2 = _simpson_pieces(lambda v: kernel(v) ** 2, edges, quad)
    kstar0 = kstar_eval(kernel, 0.0, quad)

    kstar2 = _simpson_pieces(
        lambda xs: _kstar_many(kernel, xs, quad) ** 2, _outer_edges(kernel), quad
    )
    return KernelConstants(float(kappa2), float(K2), kstar0, float(kstar2), quad)


def kernel_constants(kernel: Kernel, quad: int = DEFAULT_QUAD) -> KernelConstants:
    """Quadrature values of kappa2, K2, K*(0) and the integral of K*^2."""
    if quad < 64:
        raise DomainError(f"quadrature order must be at least 64, got {quad}")
    return _constants_cached(kernel, int(quad))


def custom_kernel(
    func: Callable[[np.ndarray], np.ndarray],
    name: str = "custom",
    knots: Sequence[float] = (),
    quad: int = DEFAULT_QUAD,
) -> Kernel:
    """
    Wrap a user function as a validated kernel.

    The function must be finite, symmetric and integrate to one on
    [-1, 1]; any violation raises :class:`KernelError`. Nothing is
    renormalized.
    """
    kernel = Kernel(name, func, tuple(float(k) for k in knots))
    v = np.linspace(0.0, 1.0, 1001)
    left, right = kernel(-v), kernel(v)
    if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
        raise KernelError(f"kernel {name!r} is not finite on [-1, 1]")
    if np.max(np.abs(left - right)) > 1e-10:
        raise KernelError(f"kernel {name!r} is not symmetric")
    mass = _simpson_pieces(kernel, kernel.all_knots, quad)
    if abs(mass - 1.0) > 1e-8:
        raise KernelError(f"kernel {name!r} integrates to {mass:.12g}, not 1")
    return kernel
