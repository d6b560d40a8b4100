"""Gaussian copulas over LKJ-parameterized correlation matrices.

A correlation matrix is built from an unconstrained vector ``theta`` by
filling the strict lower triangle of ``I + tril(theta)`` and normalizing each
row to unit length.  The result ``L`` lies on the oblique manifold, so
``P = L @ L.T`` has a unit diagonal and is positive semidefinite for every
``theta``.

The four-structure hierarchy (state-landmark, landmark-landmark, state
components, landmark components) owns disjoint sets of coordinate pairs.  Its
joint density is the Gaussian copula of the single correlation matrix
assembled from all four parameter blocks, see :meth:`CopulaHierarchy.assemble`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

from .errors import DomainError, NumericError
from .stats import clamp_prob, norm_cdf

STRUCTURES = ("state_landmark", "landmark_landmark", "state_components", "landmark_components")


def n_theta(dim: int) -> int:
    return dim * (dim - 1) // 2


def _tril_index(dim: int):
    # row-major order over the strict lower triangle: (1,0), (2,0), (2,1), ...
    return np.tril_indices(dim, k=-1)


def lkj_cholesky(theta, dim: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n_theta(dim),):
        raise DomainError(f"theta must have length {n_theta(dim)} for dim {dim}, got {theta.shape}")
    raw = np.eye(dim)
    raw[_tril_index(dim)] = theta
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def lkj_vjp(theta, dim: int, grad_L) -> np.ndarray:
    """Pull an adjoint on ``L`` back to an adjoint on ``theta``."""
    raw = np.eye(dim)
    raw[_tril_index(dim)] = theta
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    L = raw / norms
    g = np.tril(np.asarray(grad_L, dtype=float))
    g_raw = (g - np.sum(g * L, axis=1, keepdims=True) * L) / norms
    return g_raw[_tril_index(dim)]


@dataclass(frozen=True)
class CorrelationStructure:
    """Unconstrained ``theta`` plus the derived Cholesky factor and correlation."""

    dim: int
    theta: np.ndarray = None

    def __post_init__(self):
        theta = np.zeros(n_theta(self.dim)) if self.theta is None else np.asarray(self.theta, float)
        object.__setattr__(self, "theta", theta.copy())
        self.L  # validates length

    @cached_property
    def L(self) -> np.ndarray:
        return lkj_cholesky(self.theta, self.dim)

    @cached_property
    def P(self) -> np.ndarray:
        P = self.L @ self.L.T
        np.fill_diagonal(P, 1.0)
        return P

    @cached_property
    def log_det(self) -> float:
        """``log det P`` from the Cholesky diagonal."""
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))


def lkj_build(theta, dim: int) -> CorrelationStructure:
    return CorrelationStructure(dim, np.asarray(theta, dtype=float))


def _scores(u):
    u = clamp_prob(np.asarray(u, dtype=float))
    return special.ndtri(u)


def _check_det(corr: CorrelationStructure):
    if corr.log_det < np.log(1e-300):
        raise NumericError(f"correlation matrix is numerically singular (log det {corr.log_det:.1f})")


def gauss_copula_logdensity_z(z, corr: CorrelationStructure):
    """Copula log-density expressed through normal scores ``z = Phi^-1(u)``."""
    _check_det(corr)
    z = np.asarray(z, dtype=float)
    w = solve_triangular(corr.L, z.reshape(-1, corr.dim).T, lower=True).T.reshape(z.shape)
    return -0.5 * np.sum(w * w - z * z, axis=-1) - 0.5 * corr.log_det


def gauss_copula_logdensity(u, corr: CorrelationStructure):
    """``log c(u) = -1/2 z'(P^-1 - I) z - 1/2 log det P`` with ``z = Phi^-1(u)``.

    ``u`` has shape ``(..., dim)``; inputs are clamped to ``[1e-15, 1 - 1e-15]``.
    """
    out = gauss_copula_logdensity_z(_scores(u), corr)
    return float(out) if np.ndim(out) == 0 else out


def gauss_copula_grad_L(z, corr: CorrelationStructure) -> np.ndarray:
    """Gradient of the summed copula log-density in the entries of ``L``."""
    z = np.atleast_2d(z)
    w = solve_triangular(corr.L, z.T, lower=True)
    v = solve_triangular(corr.L.T, w, lower=False)
    g = v @ w.T - z.shape[0] * np.diag(1.0 / np.diag(corr.L))
    return np.tril(g)


def gauss_copula_grad_theta(u, corr: CorrelationStructure) -> np.ndarray:
    """Gradient in ``theta`` of ``sum_k log c(u_k)`` over the rows of ``u``."""
    z = _scores(u).reshape(-1, corr.dim)
    return lkj_vjp(corr.theta, corr.dim, gauss_copula_grad_L(z, corr))


def gauss_copula_sample(corr: CorrelationStructure, rng: np.random.Generator, size=None):
    """Draw ``u = Phi(L eps)``; returns shape ``(dim,)`` or ``(size, dim)``."""
    shape = (corr.dim,) if size is None else (size, corr.dim)
    eps = rng.standard_normal(shape)
    return norm_cdf(eps @ corr.L.T)


# ---------------------------------------------------------------------------
# hierarchy


@dataclass(frozen=True)
class Layout:
    """Latent dimensions: ``d_s`` state components, ``n_landmarks`` of ``d_l`` each."""

    d_s: int
    n_landmarks: int = 0
    d_l: int = 1

    @property
    def dim(self) -> int:
        return self.d_s + self.n_landmarks * self.d_l

    def landmark_slice(self, j: int) -> slice:
        start = self.d_s + j * self.d_l
        return slice(start, start + self.d_l)

    def owner(self, i: int) -> int:
        """-1 for a state coordinate, else the landmark index."""
        return -1 if i < self.d_s else (i - self.d_s) // self.d_l


def _free_mask(layout: Layout, name: str) -> np.ndarray:
    if name == "state_components":
        return np.ones(n_theta(layout.d_s), dtype=bool)
    if name == "landmark_components":
        return np.ones(n_theta(layout.d_l), dtype=bool)
    if name == "state_landmark":
        rows, cols = _tril_index(layout.dim)
        return np.array([layout.owner(i) >= 0 and layout.owner(j) < 0 for i, j in zip(rows, cols)], bool)
    if name == "landmark_landmark":
        m = layout.n_landmarks * layout.d_l
        rows, cols = _tril_index(m)
        return np.array([i // layout.d_l != j // layout.d_l for i, j in zip(rows, cols)], dtype=bool)
    raise KeyError(name)


def structure_dims(layout: Layout) -> dict[str, int]:
    return {
        "state_landmark": layout.dim,
        "landmark_landmark": layout.n_landmarks * layout.d_l,
        "state_components": layout.d_s,
        "landmark_components": layout.d_l,
    }


@dataclass(frozen=True)
class CopulaHierarchy:
    """Four correlation structures tied to a latent :class:`Layout`.

    Each structure's ``theta`` is zero outside its free mask; those pairs are
    the responsibility of another structure.  The landmark-component structure
    is shared by every landmark.
    """

    layout: Layout
    structures: dict[str, CorrelationStructure] = field(default_factory=dict)

    def __post_init__(self):
        dims = structure_dims(self.layout)
        full = {}
        for name in STRUCTURES:
            s = self.structures.get(name, CorrelationStructure(dims[name]))
            if s.dim != dims[name]:
                raise DomainError(f"{name} has dim {s.dim}, layout requires {dims[name]}")
            if np.any(s.theta[~_free_mask(self.layout, name)] != 0):
                raise DomainError(f"{name} theta is nonzero outside its free block")
            full[name] = s
        object.__setattr__(self, "structures", full)

    @classmethod
    def from_thetas(cls, layout: Layout, thetas: dict[str, np.ndarray]) -> CopulaHierarchy:
        dims = structure_dims(layout)
        return cls(layout, {k: CorrelationStructure(dims[k], thetas[k]) for k in thetas})

    @staticmethod
    def free_masks(layout: Layout) -> dict[str, np.ndarray]:
        return {name: _free_mask(layout, name) for name in STRUCTURES}

    def __getitem__(self, name: str) -> CorrelationStructure:
        return self.structures[name]

    @cached_property
    def _assembly(self):
        lay = self.layout
        d = lay.dim
        raw = np.zeros((d, d))
        rows, cols = _tril_index(d)
        src = []  # (structure, theta index) per full strict-lower entry
        sl = self["state_landmark"].theta
        ll = self["landmark_landmark"].theta
        sc = self["state_components"].theta
        lc = self["landmark_components"].theta
        ll_pos = {(i, j): k for k, (i, j) in enumerate(zip(*_tril_index(lay.n_landmarks * lay.d_l)))}
        sc_pos = {(i, j): k for k, (i, j) in enumerate(zip(*_tril_index(lay.d_s)))}
        lc_pos = {(i, j): k for k, (i, j) in enumerate(zip(*_tril_index(lay.d_l)))}
        for k, (i, j) in enumerate(zip(rows, cols)):
            oi, oj = lay.owner(i), lay.owner(j)
            if oi < 0 and oj < 0:
                key = ("state_components", sc_pos[(i, j)])
                raw[i, j] = sc[key[1]]
            elif oj < 0:
                key = ("state_landmark", k)
                raw[i, j] = sl[k]
            elif oi != oj:
                key = ("landmark_landmark", ll_pos[(i - lay.d_s, j - lay.d_s)])
                raw[i, j] = ll[key[1]]
            else:
                base = lay.d_s + oi * lay.d_l
                key = ("landmark_components", lc_pos[(i - base, j - base)])
                raw[i, j] = lc[key[1]]
            src.append(key)
        return raw[rows, cols], src

    @cached_property
    def full(self) -> CorrelationStructure:
        """The single correlation structure over all ``layout.dim`` coordinates."""
        return CorrelationStructure(self.layout.dim, self._assembly[0])

    def scatter_grad(self, grad_full_theta) -> dict[str, np.ndarray]:
        """Map a gradient on the assembled theta back onto the four structures."""
        out = {name: np.zeros_like(s.theta) for name, s in self.structures.items()}
        for g, (name, k) in zip(grad_full_theta, self._assembly[1]):
            out[name][k] += g
        return out


def assemble_full_cholesky(h: CopulaHierarchy) -> np.ndarray:
    L = h.full.L
    if np.min(np.diag(L)) <= 0:
        raise NumericError(f"assembled correlation is not positive definite (theta={h.full.theta})")
    return L


def hierarchy_logdensity(u_state, u_landmarks, h: CopulaHierarchy):
    """Joint copula log-density of one state block and ``n_landmarks`` landmark blocks."""
    lay = h.layout
    u_state = np.asarray(u_state, dtype=float)
    u_lm = np.asarray(u_landmarks, dtype=float).reshape(*u_state.shape[:-1], -1)
    if u_state.shape[-1] != lay.d_s or u_lm.shape[-1] != lay.n_landmarks * lay.d_l:
        raise DomainError("copula inputs do not match the hierarchy layout")
    return gauss_copula_logdensity(np.concatenate([u_state, u_lm], axis=-1), h.full)
