"""Independent references: truncated number-basis kets and direct qudit algebra."""

import math

import numpy as np

from teleport_sim.fock import FockVector


def coherent_ket(h, cutoff):
    """Normalized coherent ket over ``len(h)`` coordinates, truncated at ``cutoff`` quanta each."""
    k = np.arange(cutoff)
    log_fact = np.array([math.lgamma(j + 1) for j in k])
    out = np.ones(1, dtype=complex)
    for z in np.asarray(h, dtype=complex):
        if z == 0:
            mode = np.zeros(cutoff, dtype=complex)
            mode[0] = 1.0
        else:
            mode = np.exp(-0.5 * abs(z) ** 2 + k * np.log(z) - 0.5 * log_fact)
        out = np.kron(out, mode)
    return out


def dense(v: FockVector, cutoff: int = 24) -> np.ndarray:
    """Dense number-basis vector of a coherent-span vector (factors in order)."""
    size = cutoff ** (v.modes * v.dim)
    out = np.zeros(size, dtype=complex)
    for amp, facs in zip(v.amplitudes, v.factors):
        ket = np.ones(1, dtype=complex)
        for h in facs:
            ket = np.kron(ket, coherent_ket(h, cutoff))
        out += amp * ket
    return out


def occupation_grid(dim: int, cutoff: int) -> np.ndarray:
    """Occupation numbers of every dense basis state, shape ``(cutoff**dim, dim)``."""
    grids = np.meshgrid(*[np.arange(cutoff)] * dim, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def key_oracle(b, n, m):
    """``V_nm`` with ``V_nm |j> = conj(b_nj) |j + m mod N>``, entry by entry."""
    big_n = b.shape[0]
    v = np.zeros((big_n, big_n), dtype=complex)
    for j in range(big_n):
        v[(j + m) % big_n, j] = np.conj(b[n, j])
    return v


def random_span(rng, dim, terms=3, modes=1, scale=0.6):
    amps = rng.standard_normal(terms) + 1j * rng.standard_normal(terms)
    facs = scale * (rng.standard_normal((terms, modes, dim)) + 1j * rng.standard_normal((terms, modes, dim)))
    return FockVector(amps, facs)
