"""One-particle space and beam-splitter operator data.

The one-particle space is never discretised.  Only finitely many inner
products among the vectors that enter the protocol matter, so a mode vector
is simply a complex coefficient array over an abstract orthonormal basis of
some ambient dimension ``M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

OPERATOR_TOL = 1e-12

__all__ = [
    "Splitting",
    "ValidationReport",
    "mode_vector",
    "half_half_splitting",
    "projection_splitting",
    "custom_splitting",
    "validate_splitting",
    "haar_unitary",
    "operator_norm",
]


def mode_vector(coeffs) -> np.ndarray:
    """Validate and return a one-particle vector as a 1-D complex array."""
    vec = np.asarray(coeffs, dtype=complex)
    if vec.ndim != 1 or vec.size < 1:
        raise ValueError(f"mode vector must be a non-empty 1-D array, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("mode vector has non-finite entries")
    return vec


def operator_norm(mat: np.ndarray) -> float:
    return float(np.linalg.norm(mat, 2))


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=complex)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Splitting:
    """Beam-splitter data ``(K1, K2, T)`` together with the designated basis.

    Attributes:
        k1, k2: ``M x M`` matrices with ``K1^* K1 + K2^* K2 = 1``.
        t: unitary carrying the Alice-side arm onto the Bob-side arm.
        basis: ``N x M`` array whose rows are the orthonormal vectors ``g_j``.
        kind: one of ``"half-half"``, ``"projection-pair"``, ``"custom"``.
        region_x1, region_x2: boolean masks over the ambient coordinates for
            projection-type splittings (``None`` otherwise).
    """

    k1: np.ndarray
    k2: np.ndarray
    t: np.ndarray
    basis: np.ndarray
    kind: str = "custom"
    region_x1: Optional[np.ndarray] = field(default=None, repr=False)
    region_x2: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("k1", "k2", "t", "basis"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        m = self.k1.shape[0]
        for name in ("k1", "k2", "t"):
            if getattr(self, name).shape != (m, m):
                raise ValueError(f"{name} must be {m}x{m}, got {getattr(self, name).shape}")
        if self.basis.ndim != 2 or self.basis.shape[1] != m:
            raise ValueError(f"basis must have shape (N, {m}), got {self.basis.shape}")
        if self.kind not in ("half-half", "projection-pair", "custom"):
            raise ValueError(f"unknown splitting kind {self.kind!r}")
        for name in ("region_x1", "region_x2"):
            mask = getattr(self, name)
            if mask is not None:
                mask = np.array(mask, dtype=bool)
                if mask.shape != (m,):
                    raise ValueError(f"{name} must be a length-{m} mask")
                mask.setflags(write=False)
                object.__setattr__(self, name, mask)

    @property
    def ambient_dim(self) -> int:
        return self.k1.shape[0]

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def is_projection(self) -> bool:
        return self.region_x2 is not None


def half_half_splitting(n: int) -> Splitting:
    """Symmetric 50/50 splitter: ``K1 = K2 = I/sqrt(2)``, ``T = I`` on ``C^n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    eye = np.eye(n, dtype=complex)
    k = eye / np.sqrt(2.0)
    return Splitting(k1=k, k2=k, t=eye, basis=eye, kind="half-half")


def projection_splitting(n: int) -> Splitting:
    """Two disjoint regions related by a translation.

    The ambient space has dimension ``2n``: coordinate ``2j`` holds the part of
    ``g_j`` living in region X1 and ``2j + 1`` the translated copy in X2.  Each
    ``g_j`` puts mass 1/2 in each region, ``K1``/``K2`` are the region
    projections and ``T`` swaps the two copies.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    m = 2 * n
    x1 = np.zeros(m, dtype=bool)
    x1[0::2] = True
    x2 = ~x1
    k1 = np.diag(x1.astype(complex))
    k2 = np.diag(x2.astype(complex))
    t = np.zeros((m, m), dtype=complex)
    for j in range(n):
        t[2 * j + 1, 2 * j] = 1.0
        t[2 * j, 2 * j + 1] = 1.0
    basis = np.zeros((n, m), dtype=complex)
    for j in range(n):
        basis[j, 2 * j] = basis[j, 2 * j + 1] = 1.0 / np.sqrt(2.0)
    return Splitting(k1=k1, k2=k2, t=t, basis=basis, kind="projection-pair",
                     region_x1=x1, region_x2=x2)


def custom_splitting(k1, k2, t, basis) -> Splitting:
    return Splitting(k1=k1, k2=k2, t=t, basis=basis, kind="custom")


@dataclass(frozen=True)
class ValidationReport:
    """Residual norms of the splitting identities and a pass flag for each."""

    residuals: dict
    tolerance: float = OPERATOR_TOL

    @property
    def passed(self) -> dict:
        return {name: bool(r < self.tolerance) for name, r in self.residuals.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def failures(self) -> list:
        return [name for name, p in self.passed.items() if not p]


def validate_splitting(s: Splitting, basis=None, tol: float = OPERATOR_TOL) -> ValidationReport:
    """Check the splitting identities on the full ambient matrices and on ``basis``.

    Residual keys:

    * ``resolution_of_identity``: ``||K1^* K1 + K2^* K2 - 1||``
    * ``t_unitary``: ``||T^* T - 1||``
    * ``t_maps_arms``: ``max_j ||T K1 g_j - K2 g_j||``
    * ``k1_orthogonal``: ``max_{j!=k} |<K1 g_k, K1 g_j>|``
    * ``half_mass``: ``max_j max(| ||K1 g_j||^2 - 1/2 |, | ||K2 g_j||^2 - 1/2 |)``
    * ``k2_orthogonal``: ``max_{j!=k} |<K2 g_k, K2 g_j>|``

    Args:
        s: the splitting.
        basis: rows ``g_j``; defaults to ``s.basis``.
        tol: pass threshold for every residual.

    Raises:
        ValueError: if the basis does not live in the ambient space of ``s``.
    """
    g = s.basis if basis is None else np.atleast_2d(np.asarray(basis, dtype=complex))
    m = s.ambient_dim
    if g.ndim != 2 or g.shape[1] != m:
        raise ValueError(f"basis vectors must have length {m}, got shape {g.shape}")
    eye = np.eye(m)
    k1g = g @ s.k1.T  # rows K1 g_j
    k2g = g @ s.k2.T
    gram1 = k1g.conj() @ k1g.T
    gram2 = k2g.conj() @ k2g.T
    off = ~np.eye(g.shape[0], dtype=bool)
    residuals = {
        "resolution_of_identity": operator_norm(s.k1.conj().T @ s.k1 + s.k2.conj().T @ s.k2 - eye),
        "t_unitary": operator_norm(s.t.conj().T @ s.t - eye),
        "t_maps_arms": float(np.max(np.linalg.norm(k1g @ s.t.T - k2g, axis=1))),
        "k1_orthogonal": float(np.max(np.abs(gram1[off]), initial=0.0)),
        "half_mass": float(max(np.max(np.abs(np.diag(gram1).real - 0.5)),
                               np.max(np.abs(np.diag(gram2).real - 0.5)))),
        "k2_orthogonal": float(np.max(np.abs(gram2[off]), initial=0.0)),
    }
    return ValidationReport(residuals=residuals, tolerance=tol)


def haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary from the QR decomposition of a complex Ginibre matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    phases = np.diag(r) / np.abs(np.diag(r))
    return q * phases
