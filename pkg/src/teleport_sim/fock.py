"""Exact linear algebra on finite coherent spans of the symmetric Fock space.

A :class:`FockVector` on ``p`` tensor factors is a finite sum

    sum_t  amplitude_t * |exp(h_t1)> (x) ... (x) |exp(h_tp)>

where ``|exp(h)> = exp(-||h||^2 / 2) exp(h)`` is the *normalized* coherent
vector.  Storing amplitudes against normalized coherent vectors keeps every
overlap bounded by one (the shifted kernel
``exp(<g, h> - ||g||^2/2 - ||h||^2/2)``) so nothing overflows at large beam
density.  The unnormalized exponential vectors of the theory are available
through :meth:`FockVector.exponential`.

Everything else (norms, operators, partial pairings, matrix representations)
is derived from the kernel ``<exp(g), exp(h)> = e^{<g, h>}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .hilbert import OPERATOR_TOL, Splitting, mode_vector, operator_norm

MERGE_TOL = 1e-12
GRAM_CUTOFF = 1e-10
LEAKAGE_TOL = 1e-10
NULL_NORM = 1e-150

__all__ = [
    "NullVectorError",
    "SupportError",
    "FockVector",
    "DensityOperator",
    "OrthonormalFrame",
    "kernel",
    "normalized_kernel",
    "inner",
    "norm",
    "normalize",
    "tensor",
    "permute",
    "embed",
    "contract",
    "pair_first",
    "malliavin_d",
    "skorohod_s",
    "second_quantize",
    "split_iso",
    "split_iso_adjoint",
    "vacuum_filter",
    "vacuum_removed",
    "span_basis",
    "joint_frame",
    "matrix_rep",
    "fidelity",
    "trace_distance",
    "matrix_fidelity",
    "matrix_trace_distance",
    "gram_matrix",
    "overlaps",
]


class NullVectorError(ValueError):
    """Raised when normalising a vector of (numerically) zero norm."""


class SupportError(ValueError):
    """Raised when an operator is not supported on the requested span."""


def _check_dims(g: np.ndarray, h: np.ndarray) -> None:
    if g.shape != h.shape:
        raise ValueError(f"dimension mismatch: {g.shape} vs {h.shape}")


def kernel(g, h) -> complex:
    """Overlap ``<exp(g), exp(h)> = e^{<g, h>}`` of unnormalized exponential vectors."""
    g, h = mode_vector(g), mode_vector(h)
    _check_dims(g, h)
    return complex(np.exp(np.vdot(g, h)))


def normalized_kernel(g, h) -> complex:
    """Overlap of the normalized coherent vectors ``|exp(g)>`` and ``|exp(h)>``."""
    g, h = mode_vector(g), mode_vector(h)
    _check_dims(g, h)
    return complex(np.exp(np.vdot(g, h) - 0.5 * np.vdot(g, g).real - 0.5 * np.vdot(h, h).real))


def _log_kernel(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """Log of the normalized kernel between all term pairs, summed over factors.

    ``f1`` has shape ``(T1, q, M)`` and ``f2`` shape ``(T2, q, M)``.  Uses
    ``Re<g,h> - ||g||^2/2 - ||h||^2/2 = -||g - h||^2 / 2`` so that nearly equal
    generators of large norm do not lose digits.
    """
    diff = f1[:, None, :, :] - f2[None, :, :, :]
    real = -0.5 * np.sum(diff.real ** 2 + diff.imag ** 2, axis=(2, 3))
    imag = np.einsum("spm,tpm->st", f1.conj(), f2).imag
    return real + 1j * imag


def _pairing(coeffs: np.ndarray, f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """``coeffs^H K`` with ``K`` the kernel matrix, shape ``(r, T2)``.

    Written as ``conj(sum coeffs) + coeffs^H expm1(L)``: the vacuum-removed
    vectors are near-cancelling differences at low density and this split
    keeps their overlaps accurate.
    """
    em = np.expm1(_log_kernel(f1, f2))
    return coeffs.conj().T @ em + coeffs.sum(axis=0).conj()[:, None]


def _close_pairs(flat: np.ndarray, tol: float) -> np.ndarray:
    """Boolean matrix of term pairs whose factors agree entrywise within ``tol``."""
    count, width = flat.shape
    out = np.empty((count, count), dtype=bool)
    step = max(1, int(2_000_000 // max(1, count * width)))
    for lo in range(0, count, step):
        block = flat[lo:lo + step]
        out[lo:lo + step] = np.max(np.abs(block[:, None, :] - flat[None, :, :]), axis=2) <= tol
    return out


def _merge_exact(amps: np.ndarray, flat: np.ndarray):
    """Sum amplitudes of bitwise-identical factor rows, keeping first-occurrence order."""
    _, first, inverse = np.unique(flat.view(float), axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    if first.shape[0] == flat.shape[0]:
        return amps, flat
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.shape[0])
    merged = np.zeros(first.shape[0], dtype=complex)
    np.add.at(merged, rank[inverse], amps)
    return merged, flat[first[order]]


def _canonicalize(amps: np.ndarray, factors: np.ndarray, tol: float):
    count = amps.shape[0]
    if count == 0:
        return amps, factors
    flat = np.ascontiguousarray(factors.reshape(count, -1))
    if count > 1:
        amps, flat = _merge_exact(amps, flat)
        count = amps.shape[0]
    if count > 1:
        close = _close_pairs(flat, tol)
        if np.any(np.triu(close, 1)):
            owner = np.full(count, -1)
            for i in range(count):
                if owner[i] < 0:
                    owner[(owner < 0) & close[i]] = i
            reps = np.unique(owner)
            merged = np.zeros(count, dtype=complex)
            np.add.at(merged, owner, amps)
            amps, flat = merged[reps], flat[reps]
    keep = amps != 0
    return amps[keep], flat[keep].reshape((-1,) + factors.shape[1:])


class FockVector:
    """Finite linear combination of tensor products of coherent vectors.

    Args:
        amplitudes: shape ``(T,)`` complex coefficients.
        factors: shape ``(T, p, M)``; ``factors[t, q]`` is the one-particle
            vector generating tensor factor ``q`` of term ``t``.

    Terms whose factor lists agree entrywise within ``MERGE_TOL`` are merged
    and zero amplitudes dropped, so the empty term list is the zero vector.
    Instances are immutable.
    """

    __slots__ = ("amplitudes", "factors")

    def __init__(self, amplitudes, factors, *, merge_tol: float = MERGE_TOL):
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        facs = np.asarray(factors, dtype=complex)
        if facs.ndim != 3:
            raise ValueError(f"factors must have shape (T, p, M), got {facs.shape}")
        if facs.shape[0] != amps.shape[0]:
            raise ValueError("one amplitude per term required")
        if facs.shape[1] < 1 or facs.shape[2] < 1:
            raise ValueError("need at least one tensor factor of positive dimension")
        if not (np.all(np.isfinite(amps)) and np.all(np.isfinite(facs))):
            raise ValueError("non-finite amplitude or factor")
        amps, facs = _canonicalize(amps, facs, merge_tol)
        amps.setflags(write=False)
        facs.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "factors", facs)

    def __setattr__(self, name, value):
        raise AttributeError("FockVector is immutable")

    # constructors

    @classmethod
    def zero(cls, dim: int, modes: int = 1) -> "FockVector":
        return cls(np.zeros(0), np.zeros((0, modes, dim)))

    @classmethod
    def vacuum(cls, dim: int, modes: int = 1) -> "FockVector":
        return cls([1.0], np.zeros((1, modes, dim)))

    @classmethod
    def coherent(cls, *hs, amplitude: complex = 1.0) -> "FockVector":
        """``amplitude * |exp(h_1)> (x) ... (x) |exp(h_p)>`` with unit-norm factors."""
        facs = np.stack([mode_vector(h) for h in hs])
        return cls([amplitude], facs[None])

    @classmethod
    def exponential(cls, *hs, amplitude: complex = 1.0) -> "FockVector":
        """``amplitude * exp(h_1) (x) ... (x) exp(h_p)`` (unnormalized)."""
        facs = np.stack([mode_vector(h) for h in hs])
        scale = np.exp(0.5 * np.sum(np.abs(facs) ** 2))
        return cls([amplitude * scale], facs[None])

    @classmethod
    def sum(cls, vectors: Sequence["FockVector"], coeffs=None) -> "FockVector":
        vectors = list(vectors)
        if not vectors:
            raise ValueError("empty sum")
        if coeffs is None:
            coeffs = np.ones(len(vectors))
        _same_space(*vectors)
        amps = np.concatenate([c * v.amplitudes for c, v in zip(coeffs, vectors)])
        facs = np.concatenate([v.factors for v in vectors])
        return cls(amps, facs)

    # shape

    @property
    def modes(self) -> int:
        return self.factors.shape[1]

    @property
    def dim(self) -> int:
        return self.factors.shape[2]

    def __len__(self) -> int:
        return self.amplitudes.shape[0]

    def __repr__(self) -> str:
        return f"FockVector(modes={self.modes}, dim={self.dim}, terms={len(self)})"

    # vector space

    def __add__(self, other: "FockVector") -> "FockVector":
        if not isinstance(other, FockVector):
            return NotImplemented
        return FockVector.sum([self, other])

    def __sub__(self, other: "FockVector") -> "FockVector":
        if not isinstance(other, FockVector):
            return NotImplemented
        return FockVector.sum([self, other], [1.0, -1.0])

    def __neg__(self) -> "FockVector":
        return FockVector(-self.amplitudes, self.factors)

    def __mul__(self, scalar) -> "FockVector":
        if isinstance(scalar, FockVector):
            return NotImplemented
        return FockVector(complex(scalar) * self.amplitudes, self.factors)

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "FockVector":
        return self * (1.0 / complex(scalar))

    # serialization

    def to_dict(self) -> dict:
        return {
            "modes": self.modes,
            "dim": self.dim,
            "convention": "normalized-coherent",
            "terms": [
                {
                    "amplitude": [a.real, a.imag],
                    "factors": [[[z.real, z.imag] for z in h] for h in f],
                }
                for a, f in zip(self.amplitudes, self.factors)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FockVector":
        terms = data["terms"]
        if not terms:
            return cls.zero(data["dim"], data["modes"])
        amps = [complex(*t["amplitude"]) for t in terms]
        facs = [[[complex(*z) for z in h] for h in t["factors"]] for t in terms]
        return cls(amps, facs)


def _same_space(*vectors: FockVector) -> None:
    first = vectors[0]
    for v in vectors[1:]:
        if v.modes != first.modes:
            raise ValueError(f"mode mismatch: {first.modes} vs {v.modes}")
        if v.dim != first.dim:
            raise ValueError(f"dimension mismatch: {first.dim} vs {v.dim}")


def inner(v: FockVector, w: FockVector) -> complex:
    """``<v, w>``, antilinear in ``v``."""
    _same_space(v, w)
    if not len(v) or not len(w):
        return 0j
    return complex(_pairing(v.amplitudes[:, None], v.factors, w.factors)[0] @ w.amplitudes)


def _stack(vectors: Sequence[FockVector]):
    """Pool the terms of several vectors: ``(factors, coeffs)`` with one coefficient column per vector."""
    facs = np.concatenate([v.factors for v in vectors])
    coeffs = np.zeros((facs.shape[0], len(vectors)), dtype=complex)
    row = 0
    for col, v in enumerate(vectors):
        coeffs[row:row + len(v), col] = v.amplitudes
        row += len(v)
    return facs, coeffs


def overlaps(bras: Sequence[FockVector], v: FockVector) -> np.ndarray:
    """``[<bra, v> for bra in bras]`` in one kernel evaluation."""
    _same_space(*bras, v)
    if not len(v):
        return np.zeros(len(bras), dtype=complex)
    facs, coeffs = _stack(bras)
    return _pairing(coeffs, facs, v.factors) @ v.amplitudes


def gram_matrix(vectors: Sequence[FockVector]) -> np.ndarray:
    _same_space(*vectors)
    facs, coeffs = _stack(vectors)
    if not facs.shape[0]:
        return np.zeros((len(vectors), len(vectors)), dtype=complex)
    gram = _pairing(coeffs, facs, facs) @ coeffs
    return 0.5 * (gram + gram.conj().T)


def norm(v: FockVector) -> float:
    return float(np.sqrt(max(inner(v, v).real, 0.0)))


def normalize(v: FockVector) -> FockVector:
    """Return ``v / ||v||``.

    Raises:
        NullVectorError: if ``||v|| <= 1e-150``.
    """
    nv = norm(v)
    if not nv > NULL_NORM:
        raise NullVectorError(f"cannot normalise vector of norm {nv:.3e}")
    return v / nv


def tensor(v: FockVector, w: FockVector) -> FockVector:
    if v.dim != w.dim:
        raise ValueError(f"dimension mismatch: {v.dim} vs {w.dim}")
    amps = np.outer(v.amplitudes, w.amplitudes).reshape(-1)
    tv, tw = len(v), len(w)
    facs = np.concatenate(
        [np.repeat(v.factors, tw, axis=0), np.tile(w.factors, (tv, 1, 1))], axis=1
    )
    return FockVector(amps, facs.reshape(tv * tw, v.modes + w.modes, v.dim))


def permute(v: FockVector, order: Sequence[int]) -> FockVector:
    """Reorder tensor factors: factor ``q`` of the result is factor ``order[q]`` of ``v``."""
    order = list(order)
    if sorted(order) != list(range(v.modes)):
        raise ValueError(f"{order} is not a permutation of {v.modes} factors")
    return FockVector(v.amplitudes, v.factors[:, order, :])


def embed(u: FockVector, w: FockVector, position: int) -> FockVector:
    """Tensor ``u`` into ``w`` so that its factors start at ``position``."""
    if not 0 <= position <= w.modes:
        raise ValueError("position out of range")
    joint = tensor(u, w)
    q = u.modes
    rest = list(range(q, q + w.modes))
    order = rest[:position] + list(range(q)) + rest[position:]
    return permute(joint, order)


def contract(bra: FockVector, v: FockVector, positions: Sequence[int]) -> FockVector:
    """Pair the factors ``positions`` of ``v`` antilinearly against ``bra``.

    The result lives on the remaining factors of ``v`` in their original order.
    """
    positions = list(positions)
    if bra.modes != len(positions):
        raise ValueError(f"bra has {bra.modes} factors, {len(positions)} positions given")
    if len(set(positions)) != len(positions) or not all(0 <= p < v.modes for p in positions):
        raise ValueError("invalid positions")
    if len(positions) >= v.modes:
        raise ValueError("contraction must leave at least one factor")
    if bra.dim != v.dim:
        raise ValueError(f"dimension mismatch: {bra.dim} vs {v.dim}")
    rest = [q for q in range(v.modes) if q not in positions]
    if not len(bra) or not len(v):
        return FockVector.zero(v.dim, len(rest))
    amps = _pairing(bra.amplitudes[:, None], bra.factors, v.factors[:, positions, :])[0] * v.amplitudes
    return FockVector(amps, v.factors[:, rest, :])


def pair_first(bra: FockVector, v: FockVector) -> FockVector:
    """``(<bra| (x) 1) v``: contract the first ``bra.modes`` factors of ``v``.

    For a unit vector ``xi`` and ``F = |xi><xi|`` one has
    ``(F (x) 1) v = tensor(xi, pair_first(xi, v))``.
    """
    if v.modes <= bra.modes:
        raise ValueError(f"need more than {bra.modes} factors, got {v.modes}")
    return contract(bra, v, range(bra.modes))


def _map_factors(v: FockVector, mats: dict) -> FockVector:
    """Apply ``h -> A h`` on the listed factors (``{factor: A}``), keeping normalisation."""
    facs = np.array(v.factors)
    log_scale = np.zeros(len(v))
    for q, mat in mats.items():
        old = facs[:, q, :]
        new = old @ mat.T
        log_scale += 0.5 * (np.sum(np.abs(new) ** 2, axis=1) - np.sum(np.abs(old) ** 2, axis=1))
        facs[:, q, :] = new
    return FockVector(v.amplitudes * np.exp(log_scale), facs)


def malliavin_d(v: FockVector) -> FockVector:
    """Compound Malliavin derivative on a one-factor vector: ``exp(h) -> exp(h) (x) exp(h)``."""
    if v.modes != 1:
        raise ValueError(f"malliavin_d needs a 1-factor vector, got {v.modes}")
    h = v.factors[:, 0, :]
    scale = np.exp(0.5 * np.sum(np.abs(h) ** 2, axis=1))
    return FockVector(v.amplitudes * scale, np.stack([h, h], axis=1))


def skorohod_s(v: FockVector) -> FockVector:
    """Compound Skorohod integral: ``exp(g) (x) exp(h) -> exp(g + h)``."""
    if v.modes != 2:
        raise ValueError(f"skorohod_s needs a 2-factor vector, got {v.modes}")
    g, h = v.factors[:, 0, :], v.factors[:, 1, :]
    scale = np.exp(np.einsum("tm,tm->t", g.conj(), h).real)
    return FockVector(v.amplitudes * scale, (g + h)[:, None, :])


def second_quantize(t, v: FockVector, factor: Optional[int] = None) -> FockVector:
    """Apply ``Gamma(t)`` (``exp(h) -> exp(t h)``) to one factor, or to all if ``factor`` is None.

    Raises:
        ValueError: if ``||t|| > 1`` beyond round-off, or shapes disagree.
    """
    t = np.asarray(t, dtype=complex)
    if t.shape != (v.dim, v.dim):
        raise ValueError(f"operator must be {v.dim}x{v.dim}, got {t.shape}")
    if operator_norm(t) > 1.0 + OPERATOR_TOL:
        raise ValueError(f"second quantization needs ||t|| <= 1, got {operator_norm(t):.6g}")
    targets = range(v.modes) if factor is None else [factor]
    for q in targets:
        if not 0 <= q < v.modes:
            raise ValueError(f"factor {q} out of range for {v.modes} factors")
    return _map_factors(v, {q: t for q in targets})


def _require_valid(s: Splitting) -> None:
    eye = np.eye(s.ambient_dim)
    res = operator_norm(s.k1.conj().T @ s.k1 + s.k2.conj().T @ s.k2 - eye)
    if res > OPERATOR_TOL:
        raise ValueError(f"invalid splitting: K1*K1 + K2*K2 deviates from 1 by {res:.3e}")
    if s.ambient_dim <= 0:
        raise ValueError("empty splitting")


def split_iso(s: Splitting, v: FockVector) -> FockVector:
    """Beam-splitting isometry ``exp(g) -> exp(K1 g) (x) exp(K2 g)``."""
    if v.modes != 1:
        raise ValueError(f"split_iso needs a 1-factor vector, got {v.modes}")
    if v.dim != s.ambient_dim:
        raise ValueError("dimension mismatch between splitting and vector")
    _require_valid(s)
    g = v.factors[:, 0, :]
    h1, h2 = g @ s.k1.T, g @ s.k2.T
    # ||K1 g||^2 + ||K2 g||^2 = ||g||^2, so unit coherent factors stay unit
    return FockVector(v.amplitudes, np.stack([h1, h2], axis=1))


def split_iso_adjoint(s: Splitting, v: FockVector) -> FockVector:
    """Adjoint of the splitting: ``exp(h) (x) exp(g) -> exp(K1^* h + K2^* g)``."""
    if v.modes != 2:
        raise ValueError(f"split_iso_adjoint needs a 2-factor vector, got {v.modes}")
    if v.dim != s.ambient_dim:
        raise ValueError("dimension mismatch between splitting and vector")
    _require_valid(s)
    h, g = v.factors[:, 0, :], v.factors[:, 1, :]
    out = h @ s.k1.conj() + g @ s.k2.conj()
    log_scale = 0.5 * (np.sum(np.abs(out) ** 2, axis=1)
                       - np.sum(np.abs(h) ** 2, axis=1) - np.sum(np.abs(g) ** 2, axis=1))
    return FockVector(v.amplitudes * np.exp(log_scale), out[:, None, :])


def vacuum_filter(v: FockVector, factor: int = 0, mask=None,
                  splitting: Optional[Splitting] = None) -> FockVector:
    """Project one factor onto the complement of the vacuum.

    Without ``mask`` this is ``F_+ = 1 - |exp(0)><exp(0)|``, i.e.
    ``exp(h) -> exp(h) - exp(0)``.  With a boolean ``mask`` marking the
    coordinates of a region X it removes only configurations with no particle
    in X: ``exp(h) -> exp(h) - exp(h restricted to the complement of X)``.
    Region masks are meaningful only when the region is a coordinate block,
    which is how projection-type splittings are laid out.

    Raises:
        ValueError: if a mask is combined with a ``splitting`` whose arms are
            not region projections.
    """
    if mask is not None and splitting is not None and not splitting.is_projection:
        raise ValueError("region filters need a projection-type splitting")
    if not 0 <= factor < v.modes:
        raise ValueError(f"factor {factor} out of range for {v.modes} factors")
    outside = np.zeros(v.dim, dtype=bool)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (v.dim,):
            raise ValueError(f"mask must have length {v.dim}")
        outside = ~mask
    h = v.factors[:, factor, :]
    kept = np.where(outside, h, 0.0)
    removed_mass = np.sum(np.abs(h) ** 2, axis=1) - np.sum(np.abs(kept) ** 2, axis=1)
    facs = np.array(v.factors)
    facs[:, factor, :] = kept
    dropped = FockVector(v.amplitudes * np.exp(-0.5 * removed_mass), facs)
    return v - dropped


def vacuum_removed(h) -> FockVector:
    """Unit vector along ``exp(h) - exp(0)``, built without forming ``e^{||h||^2}``."""
    h = mode_vector(h)
    x = float(np.vdot(h, h).real)
    if x == 0.0:
        raise NullVectorError("exp(0) - exp(0) is the zero vector")
    denom = np.sqrt(-np.expm1(-x))  # (1 - e^{-x})^{1/2}
    vac = np.zeros_like(h)
    return FockVector([1.0 / denom, -np.exp(-0.5 * x) / denom], np.stack([h, vac])[:, None, :])


class DensityOperator:
    """Finite dyadic operator ``sum_s w_s |ket_s><bra_s|``.

    Positive rank decompositions (``bra_s is ket_s``) describe states; general
    dyads describe operators like ``|xi><xi|`` or ``|v><w|``.
    """

    __slots__ = ("summands",)

    def __init__(self, summands: Iterable):
        items = []
        for w, ket, bra in summands:
            _same_space(ket, bra)
            items.append((complex(w), ket, bra))
        if not items:
            raise ValueError("empty operator")
        _same_space(*[k for _, k, _ in items])
        object.__setattr__(self, "summands", tuple(items))

    def __setattr__(self, name, value):
        raise AttributeError("DensityOperator is immutable")

    @classmethod
    def pure(cls, v: FockVector) -> "DensityOperator":
        return cls([(1.0, v, v)])

    @classmethod
    def mixture(cls, weights, kets: Sequence[FockVector]) -> "DensityOperator":
        return cls([(w, k, k) for w, k in zip(weights, kets)])

    @classmethod
    def dyad(cls, ket: FockVector, bra: FockVector) -> "DensityOperator":
        return cls([(1.0, ket, bra)])

    @property
    def modes(self) -> int:
        return self.summands[0][1].modes

    @property
    def dim(self) -> int:
        return self.summands[0][1].dim

    def trace(self) -> complex:
        return complex(sum(w * inner(bra, ket) for w, ket, bra in self.summands))

    def vectors(self) -> list:
        out = []
        for _, ket, bra in self.summands:
            out.append(ket)
            if bra is not ket:
                out.append(bra)
        return out

    def scaled(self, factor) -> "DensityOperator":
        return DensityOperator([(w * factor, k, b) for w, k, b in self.summands])

    def conjugate_by(self, op) -> "DensityOperator":
        """``A rho A^*`` for a linear map ``op`` on FockVectors."""
        out = []
        for w, k, b in self.summands:
            image = op(k)
            out.append((w, image, image if b is k else op(b)))
        return DensityOperator(out)

    def __add__(self, other: "DensityOperator") -> "DensityOperator":
        return DensityOperator(self.summands + other.summands)

    def __sub__(self, other: "DensityOperator") -> "DensityOperator":
        return self + other.scaled(-1.0)

    def __repr__(self) -> str:
        return f"DensityOperator(modes={self.modes}, dim={self.dim}, summands={len(self.summands)})"

    def to_dict(self) -> dict:
        return {
            "modes": self.modes,
            "summands": [
                {"weight": [w.real, w.imag], "ket": k.to_dict(), "bra": b.to_dict()}
                for w, k, b in self.summands
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DensityOperator":
        return cls([
            (complex(*s["weight"]), FockVector.from_dict(s["ket"]), FockVector.from_dict(s["bra"]))
            for s in data["summands"]
        ])


@dataclass(frozen=True)
class OrthonormalFrame:
    """Orthonormal basis of a coherent span.

    Basis vector ``a`` is ``sum_t coeffs[t, a] * term_t`` where ``term_t`` is
    the normalized coherent tensor generated by ``factors[t]``.
    """

    factors: np.ndarray
    coeffs: np.ndarray
    eigenvalues: np.ndarray

    @property
    def rank(self) -> int:
        return self.coeffs.shape[1]

    @property
    def modes(self) -> int:
        return self.factors.shape[1]

    def vectors(self) -> list:
        return [FockVector(self.coeffs[:, a], self.factors) for a in range(self.rank)]

    def coordinates(self, v: FockVector) -> np.ndarray:
        """``<e_a, v>`` for every frame vector ``e_a``."""
        if v.modes != self.modes or v.dim != self.factors.shape[2]:
            raise ValueError("vector does not live in the frame's space")
        if not len(v):
            return np.zeros(self.rank, dtype=complex)
        return _pairing(self.coeffs, self.factors, v.factors) @ v.amplitudes


def span_basis(generators: Sequence[FockVector], tol: float = GRAM_CUTOFF) -> OrthonormalFrame:
    """Orthonormal frame of ``span(generators)`` from the Gram eigendecomposition.

    Gram eigenvalues below ``tol * max_eigenvalue`` are discarded, so the
    frame dimension is the numerical rank.

    Raises:
        NullVectorError: if every generator is zero.
    """
    gens = [g for g in generators if len(g)]
    if not generators:
        raise ValueError("no generators")
    _same_space(*generators)
    if not gens:
        raise NullVectorError("all generators are zero")
    gram = gram_matrix(gens)
    evals, evecs = np.linalg.eigh(0.5 * (gram + gram.conj().T))
    top = evals[-1]
    if not top > 0:
        raise NullVectorError("all generators are zero")
    keep = evals > tol * top
    evals, evecs = evals[keep][::-1], evecs[:, keep][:, ::-1]
    combo = evecs / np.sqrt(evals)  # generator -> frame coefficients
    facs = np.concatenate([g.factors for g in gens])
    coeffs = np.concatenate([g.amplitudes[:, None] * combo[i][None, :] for i, g in enumerate(gens)])
    return OrthonormalFrame(factors=facs, coeffs=coeffs, eigenvalues=evals)


def joint_frame(*ops: DensityOperator, tol: float = GRAM_CUTOFF) -> OrthonormalFrame:
    vectors = [v for op in ops for v in op.vectors()]
    return span_basis(vectors, tol)


def matrix_rep(op: DensityOperator, frame: OrthonormalFrame, leakage_tol: float = LEAKAGE_TOL):
    """Matrix ``<e_a| op |e_b>`` on the frame, plus the trace leakage.

    Returns:
        ``(matrix, leakage)`` with ``leakage = |tr(op) - tr(matrix)|``.

    Raises:
        SupportError: if the leakage exceeds ``leakage_tol``.
    """
    mat = np.zeros((frame.rank, frame.rank), dtype=complex)
    for w, ket, bra in op.summands:
        mat += w * np.outer(frame.coordinates(ket), frame.coordinates(bra).conj())
    leakage = abs(op.trace() - np.trace(mat))
    if leakage > leakage_tol:
        raise SupportError(f"operator leaks {leakage:.3e} of its trace outside the frame")
    return mat, float(leakage)


# Eigenvalues below this fraction of the largest are rounding noise; their
# square roots would otherwise leak ~1e-8 into fidelities of pure states.
_SQRT_CUTOFF = 1e-12


def _clip_spectrum(evals: np.ndarray) -> np.ndarray:
    top = max(float(np.max(evals, initial=0.0)), 0.0)
    return np.where(evals > _SQRT_CUTOFF * top, evals, 0.0)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    return (evecs * np.sqrt(_clip_spectrum(evals))) @ evecs.conj().T


def matrix_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(a) b sqrt(a)))^2`` of two density matrices."""
    root = _psd_sqrt(a)
    inner_mat = root @ b @ root
    evals = np.linalg.eigvalsh(0.5 * (inner_mat + inner_mat.conj().T))
    value = float(np.sum(np.sqrt(_clip_spectrum(evals))) ** 2)
    return min(max(value, 0.0), 1.0)


def matrix_trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    diff = a - b
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


def fidelity(rho: DensityOperator, sigma: DensityOperator) -> float:
    """Uhlmann fidelity of two states, evaluated on a joint orthonormal frame."""
    frame = joint_frame(rho, sigma)
    return matrix_fidelity(matrix_rep(rho, frame)[0], matrix_rep(sigma, frame)[0])


def trace_distance(rho: DensityOperator, sigma: DensityOperator) -> float:
    """``||rho - sigma||_1 / 2`` on a joint frame."""
    frame = joint_frame(rho, sigma)
    return matrix_trace_distance(matrix_rep(rho, frame)[0], matrix_rep(sigma, frame)[0])
