"""Teleportation through beam-split coherent states.

Three flavours share one :class:`TeleportModel`:

* ``perfect``: the entangled resource is built from vacuum-removed coherent
  vectors, every outcome has probability ``1/N^2`` and Bob's state is an exact
  unitary image of Alice's.
* ``coherent``: the resource is the beam-split superposition of genuine
  coherent beams; outcomes carry a vacuum admixture.
* ``coherent+filter``: as ``coherent`` but Bob discards the vacuum, which
  restores exactness at the cost of a success probability below one.

Indices are 0-based throughout: outcome ``(n, m)`` and basis label ``j`` run
over ``0..N-1`` and the cyclic shift is ``(j + m) % N``.  The 1-based labels
``(n + 1, m + 1)`` correspond to the usual textbook numbering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fock import (
    DensityOperator,
    FockVector,
    SupportError,
    contract,
    embed,
    gram_matrix,
    inner,
    matrix_fidelity,
    norm,
    overlaps,
    pair_first,
    second_quantize,
    split_iso,
    tensor,
    trace_distance,
    vacuum_filter,
    vacuum_removed,
)
from .hilbert import Splitting, validate_splitting

PROTOCOL_TOL = 1e-10
IMPOSSIBLE_PROB = 1e-300
SUPPORT_TOL = 1e-14
VARIANTS = ("perfect", "coherent", "coherent+filter")

__all__ = [
    "ImpossibleOutcome",
    "ModelError",
    "QuditState",
    "TeleportModel",
    "OutcomeResult",
    "PerfectnessReport",
    "ClosedForms",
    "dft_b_matrix",
    "validate_b_matrix",
    "build_model",
    "entangled_perfect",
    "entangled_coherent",
    "alice_measure",
    "bob_vacuum_post_select",
    "lift_state",
    "reduce_state",
    "end_to_end",
    "verify_perfectness",
    "closed_forms",
    "key_matrix",
]


class ImpossibleOutcome(ArithmeticError):
    """The requested outcome has (numerically) zero probability."""


class ModelError(ValueError):
    """A model ingredient violates one of its defining identities."""

    def __init__(self, check: str, residual: float, tolerance: float):
        super().__init__(f"{check}: residual {residual:.3e} exceeds {tolerance:.1e}")
        self.check = check
        self.residual = residual
        self.tolerance = tolerance


# ---------------------------------------------------------------- phases


def dft_b_matrix(n: int) -> np.ndarray:
    """Unit-modulus phases with orthogonal rows: ``b[n, k] = exp(2 pi i n k / N)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = np.arange(n)
    return np.exp(2j * np.pi * np.outer(idx, idx) / n)


def validate_b_matrix(b) -> dict:
    """Residuals of the two phase-matrix conditions.

    Returns:
        ``{"b_unit_modulus": max_nk ||b_nk| - 1|,
        "b_rows_orthogonal": max_{n != j} |<b_n, b_j>|}``
    """
    b = np.asarray(b, dtype=complex)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ValueError(f"b must be square, got shape {b.shape}")
    gram = b.conj() @ b.T
    off = ~np.eye(b.shape[0], dtype=bool)
    return {
        "b_unit_modulus": float(np.max(np.abs(np.abs(b) - 1.0))),
        "b_rows_orthogonal": float(np.max(np.abs(gram[off]), initial=0.0)),
    }


def key_matrix(b, n: int, m: int) -> np.ndarray:
    """Bob's key ``V_nm`` on ``C^N``: ``|j> -> conj(b[n, j]) |(j + m) % N>``."""
    b = np.asarray(b, dtype=complex)
    size = b.shape[0]
    v = np.zeros((size, size), dtype=complex)
    for j in range(size):
        v[(j + m) % size, j] = np.conj(b[n, j])
    return v


# ---------------------------------------------------------------- qudit states


@dataclass(frozen=True)
class QuditState:
    """``rho = sum_s weights[s] |c_s><c_s|`` with orthonormal rows ``c_s = rows[s]``."""

    weights: np.ndarray
    rows: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        c = np.asarray(self.rows, dtype=complex)
        n = w.shape[0]
        if c.shape != (n, n):
            raise ValueError(f"rows must be {n}x{n}, got {c.shape}")
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > PROTOCOL_TOL:
            raise ValueError("weights must be non-negative and sum to 1")
        if np.max(np.abs(c @ c.conj().T - np.eye(n))) > PROTOCOL_TOL:
            raise ValueError("amplitude rows must be orthonormal")
        w = np.clip(w, 0.0, None)
        w.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rows", c)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def density_matrix(self) -> np.ndarray:
        return (self.rows.T * self.weights) @ self.rows.conj()

    @classmethod
    def basis(cls, n: int, k: int) -> "QuditState":
        if not 0 <= k < n:
            raise ValueError(f"basis index {k} out of range for dimension {n}")
        rows = np.roll(np.eye(n), -k, axis=0)  # row 0 is e_k
        weights = np.zeros(n)
        weights[0] = 1.0
        return cls(weights, rows)

    @classmethod
    def uniform(cls, n: int) -> "QuditState":
        """Pure uniform superposition ``sum_j |j> / sqrt(N)``."""
        rows = dft_b_matrix(n).conj() / np.sqrt(n)
        weights = np.zeros(n)
        weights[0] = 1.0
        return cls(weights, rows)

    @classmethod
    def maximally_mixed(cls, n: int) -> "QuditState":
        return cls(np.full(n, 1.0 / n), np.eye(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "QuditState":
        """Dirichlet weights over the rows of a QR-orthonormalised Gaussian matrix."""
        z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        q, _ = np.linalg.qr(z)
        weights = rng.dirichlet(np.ones(n))
        return cls(weights, q.T)

    @classmethod
    def from_density_matrix(cls, rho) -> "QuditState":
        rho = np.asarray(rho, dtype=complex)
        rho = 0.5 * (rho + rho.conj().T)
        evals, evecs = np.linalg.eigh(rho)
        if evals[0] < -1e-9:
            raise ValueError("density matrix is not positive semidefinite")
        evals = np.clip(evals, 0.0, None)
        total = evals.sum()
        if not total > 0:
            raise ValueError("density matrix has zero trace")
        return cls(evals[::-1] / total, evecs[:, ::-1].T)


# ---------------------------------------------------------------- model


def _span_operator(basis: Sequence[FockVector], matrix: np.ndarray, v: FockVector,
                   factor: int = 0) -> FockVector:
    """Apply ``X`` on one factor, where ``X e_j = sum_i matrix[i, j] e_i`` on the
    orthonormal family ``basis`` and ``X`` is the identity on its complement."""
    delta = np.asarray(matrix) - np.eye(len(basis))
    if v.modes == 1:
        coords = overlaps(basis, v)
        return FockVector.sum([v] + list(basis), np.concatenate([[1.0], delta @ coords]))
    out = [v]
    for j, e_j in enumerate(basis):
        col = delta[:, j]
        if not np.any(col):
            continue
        out.append(embed(FockVector.sum(basis, col), contract(e_j, v, [factor]), factor))
    return FockVector.sum(out)


@dataclass(eq=False)
class TeleportModel:
    """All protocol objects for dimension ``N`` at beam density ``d``.

    Attributes:
        alice_basis: unit vectors along ``exp(a K1 g_j) - exp(0)``.
        bob_basis: unit vectors along ``exp(a K2 g_j) - exp(0)``.
        measurement: ``measurement[n][m]`` is Alice's two-factor vector whose
            projector is the outcome ``(n, m)``.
        xi: perfect entangled resource.
        eta: normalised superposition of coherent beams before splitting.
        xi_tilde: the split beam (coherent entangled resource).
        gamma: normaliser of ``eta``.
        residuals: build-time invariant residuals.
    """

    n: int
    d: float
    splitting: Splitting
    b: np.ndarray
    alice_basis: list
    bob_basis: list
    measurement: list
    xi: FockVector
    eta: FockVector
    xi_tilde: FockVector
    gamma: float
    residuals: dict = field(default_factory=dict)

    @property
    def a(self) -> float:
        return math.sqrt(self.d)

    @property
    def outcomes(self):
        return [(n, m) for n in range(self.n) for m in range(self.n)]

    def shift(self, j: int, m: int) -> int:
        return (j + m) % self.n

    # operators on Alice's span

    def b_matrix_op(self, n: int, adjoint: bool = False) -> np.ndarray:
        phases = self.b[n].conj() if adjoint else self.b[n]
        return np.diag(phases)

    def u_matrix_op(self, m: int) -> np.ndarray:
        u = np.zeros((self.n, self.n))
        for j in range(self.n):
            u[self.shift(j, m), j] = 1.0
        return u

    def apply_b(self, n: int, v: FockVector, factor: int = 0, adjoint: bool = False) -> FockVector:
        return _span_operator(self.alice_basis, self.b_matrix_op(n, adjoint), v, factor)

    def apply_u(self, m: int, v: FockVector, factor: int = 0) -> FockVector:
        return _span_operator(self.alice_basis, self.u_matrix_op(m), v, factor)

    def apply_t(self, v: FockVector, factor: int = 0, adjoint: bool = False) -> FockVector:
        t = self.splitting.t.conj().T if adjoint else self.splitting.t
        return second_quantize(t, v, factor)

    def bob_correction(self, n: int, m: int, v: FockVector) -> FockVector:
        """``Gamma(T) U_m B_n^*`` applied to a vector of Alice's span."""
        shift_phase = self.u_matrix_op(m) @ self.b_matrix_op(n, adjoint=True)
        return self.apply_t(_span_operator(self.alice_basis, shift_phase, v))

    def phi(self, row) -> FockVector:
        """``sum_j row[j] * alice_basis[j]``."""
        return FockVector.sum(self.alice_basis, np.asarray(row, dtype=complex))

    def engine_key_matrix(self, n: int, m: int) -> np.ndarray:
        """``<bob_j | Gamma(T) U_m B_n^* | alice_k>`` computed through the Fock engine."""
        v = np.empty((self.n, self.n), dtype=complex)
        for k, e_k in enumerate(self.alice_basis):
            image = self.bob_correction(n, m, e_k)
            for j, f_j in enumerate(self.bob_basis):
                v[j, k] = inner(f_j, image)
        return v


def _check(residuals: dict, name: str, value: float, tol: float) -> None:
    residuals[name] = float(value)
    if not value <= tol:
        raise ModelError(name, float(value), tol)


def build_model(n: int, d: float, splitting: Splitting, b=None, tol: float = PROTOCOL_TOL) -> TeleportModel:
    """Construct every protocol object and verify the model invariants.

    Args:
        n: qudit dimension ``N`` (must equal the number of splitting basis vectors).
        d: mean particle number of the beam, ``a = sqrt(d)``.
        splitting: beam splitter data with its basis ``g_j``.
        b: ``N x N`` phase matrix; DFT phases by default.
        tol: invariant tolerance.

    Raises:
        ValueError: for ``d <= 0`` or mismatched dimensions.
        ModelError: if the splitting, the phase matrix or any derived family
            fails its identity by more than the tolerance.
    """
    if not (isinstance(d, (int, float)) and math.isfinite(d) and d > 0):
        raise ValueError(f"density must be positive and finite, got {d!r}")
    if splitting.n != n:
        raise ValueError(f"splitting designates {splitting.n} basis vectors, expected {n}")
    b = dft_b_matrix(n) if b is None else np.asarray(b, dtype=complex)
    if b.shape != (n, n):
        raise ValueError(f"b must be {n}x{n}, got {b.shape}")

    residuals: dict = {}
    report = validate_splitting(splitting)
    for name, value in report.residuals.items():
        _check(residuals, name, value, report.tolerance)
    for name, value in validate_b_matrix(b).items():
        _check(residuals, name, value, 1e-12)

    a = math.sqrt(d)
    h1 = a * (splitting.basis @ splitting.k1.T)
    h2 = a * (splitting.basis @ splitting.k2.T)
    alice = [vacuum_removed(h) for h in h1]
    bob = [vacuum_removed(h) for h in h2]

    scale = 1.0 / math.sqrt(n)
    measurement = [
        [FockVector.sum([tensor(alice[j], alice[(j + m) % n]) for j in range(n)], scale * b[nn])
         for m in range(n)]
        for nn in range(n)
    ]
    xi = FockVector.sum([tensor(alice[k], bob[k]) for k in range(n)], np.full(n, scale))

    gamma = 1.0 / math.sqrt(1.0 + (n - 1) * math.exp(-d))
    beams = [FockVector.coherent(a * g) for g in splitting.basis]
    eta = FockVector.sum(beams, np.full(n, gamma * scale))
    xi_tilde = split_iso(splitting, eta)

    ga, gb = gram_matrix(alice), gram_matrix(bob)
    _check(residuals, "alice_basis_orthonormal", float(np.max(np.abs(ga - np.eye(n)))), tol)
    _check(residuals, "bob_basis_orthonormal", float(np.max(np.abs(gb - np.eye(n)))), tol)
    # two-factor overlaps from one-factor Grams: avoids cancelling A^2-sized amplitudes at low d
    pairs = []
    for nn in range(n):
        for m in range(n):
            p = np.zeros((n, n), dtype=complex)
            p[np.arange(n), (np.arange(n) + m) % n] = scale * b[nn]
            pairs.append(p)
    pairs = np.array(pairs)
    images = ga @ pairs @ ga.T
    meas_gram = np.einsum("ajk,cjk->ac", pairs.conj(), images)
    _check(residuals, "measurement_orthonormal",
           float(np.max(np.abs(meas_gram - np.eye(n * n)))), tol)
    xi_pair = scale * np.eye(n)
    xi_norm_sq = np.sum(xi_pair.conj() * (ga @ xi_pair @ gb.T)).real
    _check(residuals, "xi_unit", abs(math.sqrt(xi_norm_sq) - 1.0), tol)
    _check(residuals, "eta_unit", abs(norm(eta) - 1.0), tol)
    _check(residuals, "xi_tilde_unit", abs(norm(xi_tilde) - 1.0), tol)

    model = TeleportModel(n=n, d=float(d), splitting=splitting, b=b, alice_basis=alice,
                          bob_basis=bob, measurement=measurement, xi=xi, eta=eta,
                          xi_tilde=xi_tilde, gamma=gamma, residuals=residuals)
    worst = 0.0
    for nn, m in model.outcomes:
        key = key_matrix(b, nn, m)
        worst = max(worst, float(np.max(np.abs(key.conj().T @ key - np.eye(n)))))
    _check(residuals, "keys_unitary", worst, 1e-12)
    return model


def entangled_perfect(model: TeleportModel) -> FockVector:
    return model.xi


def entangled_coherent(model: TeleportModel) -> FockVector:
    return model.xi_tilde


def entangled_coherent_explicit(model: TeleportModel) -> FockVector:
    """The split beam written term by term instead of through the isometry."""
    s = model.splitting
    scale = model.gamma / math.sqrt(model.n)
    terms = [FockVector.coherent(model.a * (s.k1 @ g), model.a * (s.k2 @ g)) for g in s.basis]
    return FockVector.sum(terms, np.full(model.n, scale))


# ---------------------------------------------------------------- channels


@dataclass
class OutcomeResult:
    """One measurement outcome and what Bob holds afterwards.

    ``probability`` is the joint probability of everything selected so far
    (Alice's outcome, times Bob's filter acceptance when filtered).
    ``post_state`` is Bob's normalised one-factor state.
    """

    n: int
    m: int
    probability: float
    post_state: DensityOperator
    filtered: bool = False
    recovered_qudit: Optional[QuditState] = None
    fidelity_to_input: float = float("nan")
    e1_residual: float = float("nan")

    def unnormalized(self) -> DensityOperator:
        return self.post_state.scaled(self.probability)


def _validate_outcome(model: TeleportModel, n: int, m: int) -> None:
    if not (0 <= n < model.n and 0 <= m < model.n):
        raise ValueError(f"outcome ({n}, {m}) out of range for N={model.n}")


def _joint(rho: DensityOperator, entangled: FockVector) -> list:
    joint = []
    for w, ket, bra in rho.summands:
        jk = tensor(ket, entangled)
        jb = jk if bra is ket else tensor(bra, entangled)
        joint.append((w, jk, jb))
    return joint


def _measure_joint(model: TeleportModel, joint: list, n: int, m: int) -> OutcomeResult:
    xi_nm = model.measurement[n][m]
    summands = []
    for w, jk, jb in joint:
        k_out = pair_first(xi_nm, jk)
        b_out = k_out if jb is jk else pair_first(xi_nm, jb)
        summands.append((w, k_out, b_out))
    unnormalized = DensityOperator(summands)
    prob = unnormalized.trace().real
    if not prob >= IMPOSSIBLE_PROB:
        raise ImpossibleOutcome(f"outcome ({n}, {m}) has probability {prob:.3e}")
    return OutcomeResult(n=n, m=m, probability=prob, post_state=unnormalized.scaled(1.0 / prob))


def alice_measure(model: TeleportModel, rho: DensityOperator, entangled: FockVector,
                  n: int, m: int) -> OutcomeResult:
    """Alice selects outcome ``(n, m)``; Bob's normalised state and its probability.

    The outcome projector is rank one with a unit vector, so the partial trace
    over Alice's two factors of ``|xi_nm (x) u><xi_nm (x) v|`` is ``|u><v|``
    and the channel is evaluated summand by summand.

    Raises:
        ImpossibleOutcome: if the probability is below ``1e-300``.
    """
    _validate_outcome(model, n, m)
    if rho.modes != 1:
        raise ValueError("Alice's input state must live on one factor")
    return _measure_joint(model, _joint(rho, entangled), n, m)


def outcome_vector(model: TeleportModel, psi: FockVector, entangled: FockVector,
                   n: int, m: int) -> FockVector:
    """``(F_nm (x) 1)(psi (x) entangled)`` as a three-factor vector."""
    xi_nm = model.measurement[n][m]
    return tensor(xi_nm, pair_first(xi_nm, tensor(psi, entangled)))


def bob_vacuum_post_select(model: TeleportModel, outcome: OutcomeResult,
                           local: bool = False) -> OutcomeResult:
    """Bob keeps only the non-vacuum part of his state.

    With ``local=True`` the filter only looks at Bob's region, which needs a
    projection-type splitting.

    Raises:
        ValueError: for ``local=True`` without region projections.
        ImpossibleOutcome: if nothing survives the filter.
    """
    mask = None
    if local:
        if not model.splitting.is_projection:
            raise ValueError("local filtering needs a projection-type splitting")
        mask = model.splitting.region_x2

    def filt(v):
        return vacuum_filter(v, 0, mask, model.splitting)

    kept = outcome.post_state.conjugate_by(filt)
    acceptance = kept.trace().real
    prob = outcome.probability * acceptance
    if not (acceptance > 0 and prob >= IMPOSSIBLE_PROB):
        raise ImpossibleOutcome(
            f"outcome ({outcome.n}, {outcome.m}) is rejected by the vacuum filter")
    return OutcomeResult(n=outcome.n, m=outcome.m, probability=prob,
                         post_state=kept.scaled(1.0 / acceptance), filtered=True)


# ---------------------------------------------------------------- lift / reduce


def lift_state(model: TeleportModel, q: QuditState) -> DensityOperator:
    """Embed a qudit state into Alice's span: ``|j> -> alice_basis[j]``."""
    if q.dim != model.n:
        raise ValueError(f"qudit dimension {q.dim} does not match model N={model.n}")
    kets = [(w, model.phi(row)) for w, row in zip(q.weights, q.rows) if w > 0]
    return DensityOperator([(w, v, v) for w, v in kets])


def bob_matrix(model: TeleportModel, rho: DensityOperator) -> np.ndarray:
    """``<bob_j| rho |bob_k>`` (unnormalised compression onto Bob's span)."""
    out = np.zeros((model.n, model.n), dtype=complex)
    for w, ket, bra in rho.summands:
        ck = overlaps(model.bob_basis, ket)
        cb = ck if bra is ket else overlaps(model.bob_basis, bra)
        out += w * np.outer(ck, cb.conj())
    return out


def reduce_state(model: TeleportModel, rho: DensityOperator) -> QuditState:
    """Compress a one-factor state onto Bob's span, pull back to ``C^N`` and renormalise.

    Raises:
        SupportError: if the weight on Bob's span is below ``SUPPORT_TOL``
            times the trace (rounding level).
    """
    if rho.modes != 1:
        raise ValueError("reduce_state expects a one-factor state")
    mat = bob_matrix(model, rho)
    tr = np.trace(mat).real
    if not tr > SUPPORT_TOL * abs(rho.trace()):
        raise SupportError("state has no overlap with Bob's span")
    return QuditState.from_density_matrix(mat / tr)


def expected_output(model: TeleportModel, rho: DensityOperator, n: int, m: int) -> DensityOperator:
    """``(Gamma(T) U_m B_n^*) rho (Gamma(T) U_m B_n^*)^*``."""
    return rho.conjugate_by(lambda v: model.bob_correction(n, m, v))


# ---------------------------------------------------------------- end to end


def _entangled_for(model: TeleportModel, variant: str) -> FockVector:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return model.xi if variant == "perfect" else model.xi_tilde


def end_to_end(model: TeleportModel, q: QuditState, variant: str = "perfect",
               local: bool = False, with_e1: bool = True) -> list:
    """Teleport a qudit state through every outcome.

    For each ``(n, m)``: lift, measure, optionally filter, reduce to ``C^N``
    and undo Bob's key ``V_nm``.  Each result carries the outcome probability,
    Bob's Fock-space state, the recovered qudit, its fidelity to ``q`` and
    (when ``with_e1``) the trace distance between Bob's state and the exact
    unitary image of the lifted input.
    """
    entangled = _entangled_for(model, variant)
    rho = lift_state(model, q)
    joint = _joint(rho, entangled)
    target = q.density_matrix()
    results = []
    for n, m in model.outcomes:
        outcome = _measure_joint(model, joint, n, m)
        if variant == "coherent+filter":
            outcome = bob_vacuum_post_select(model, outcome, local=local)
        reduced = reduce_state(model, outcome.post_state).density_matrix()
        key = key_matrix(model.b, n, m)
        recovered = key.conj().T @ reduced @ key
        outcome.recovered_qudit = QuditState.from_density_matrix(recovered)
        outcome.fidelity_to_input = matrix_fidelity(recovered, target)
        if with_e1:
            outcome.e1_residual = trace_distance(outcome.post_state, expected_output(model, rho, n, m))
        results.append(outcome)
    return results


@dataclass
class PerfectnessReport:
    """Per-state residuals of the two perfectness conditions.

    ``e1[i]``: max over outcomes of the trace distance between Bob's state and
    the key-conjugated input.  ``e2[i]``: ``|sum of probabilities - 1|``.
    ``entangled_unitary``: max over outcomes of ``||xi_nm - (B_n (x) U_m
    Gamma(T^*)) xi||`` (symmetric splitter only, else ``None``).
    """

    variant: str
    e1: list
    e2: list
    total_probability: list
    entangled_unitary: Optional[float]

    def max_e1(self) -> float:
        return max(self.e1)

    def max_e2(self) -> float:
        return max(self.e2)


def measurement_from_entangled(model: TeleportModel, n: int, m: int) -> FockVector:
    """``(B_n (x) U_m Gamma(T^*)) xi``."""
    v = model.apply_t(model.xi, factor=1, adjoint=True)
    v = model.apply_u(m, v, factor=1)
    return model.apply_b(n, v, factor=0)


def entangled_unitary_residual(model: TeleportModel) -> float:
    return max(norm(model.measurement[n][m] - measurement_from_entangled(model, n, m))
               for n, m in model.outcomes)


def verify_perfectness(model: TeleportModel, states: Sequence[QuditState],
                       variant: str = "perfect", local: bool = False) -> PerfectnessReport:
    e1, e2, totals = [], [], []
    for q in states:
        results = end_to_end(model, q, variant, local=local)
        total = sum(r.probability for r in results)
        e1.append(max(r.e1_residual for r in results))
        e2.append(abs(total - 1.0))
        totals.append(total)
    unitary = entangled_unitary_residual(model) if model.splitting.kind == "half-half" else None
    return PerfectnessReport(variant=variant, e1=e1, e2=e2, total_probability=totals,
                             entangled_unitary=unitary)


# ---------------------------------------------------------------- closed forms


@dataclass(frozen=True)
class ClosedForms:
    gamma_squared: float
    per_outcome: float
    total: float


def closed_forms(n: int, d: float) -> ClosedForms:
    """Filtered success probabilities, written without any ``e^{+d}`` intermediate.

    ``gamma^2 = 1 / (1 + (N-1) e^{-d})``,
    per outcome ``gamma^2 / N^2 * (1 - e^{-d/2})^2`` (equal to
    ``gamma^2 / N^2 * (e^{d/2} - 1)^2 e^{-d}``) and total ``N^2`` times that.
    """
    if n < 1 or not d > 0:
        raise ValueError("need n >= 1 and d > 0")
    gamma_sq = 1.0 / (1.0 + (n - 1) * math.exp(-d))
    success = math.expm1(-0.5 * d) ** 2
    return ClosedForms(gamma_squared=gamma_sq, per_outcome=gamma_sq * success / n ** 2,
                       total=gamma_sq * success)


def unfiltered_pure_probability(model: TeleportModel, row, n: int) -> float:
    """Outcome probability of the unfiltered coherent model for a pure input row."""
    d = model.d
    overlap = np.vdot(model.b[n], np.asarray(row, dtype=complex))
    return model.gamma ** 2 / model.n ** 2 * (
        math.expm1(-0.5 * d) ** 2 + (-math.expm1(-0.5 * d)) * math.exp(-0.5 * d) * abs(overlap) ** 2
    )


def coherent_decomposition(model: TeleportModel, row, n: int, m: int):
    """Two-term closed form of Bob's unnormalised vector for the coherent resource.

    Returns ``(signal, vacuum)`` FockVectors whose sum is
    ``pair_first(xi_nm, phi (x) xi_tilde)``: the signal part is
    ``gamma/N (1 - e^{-d/2}) Gamma(T) U_m B_n^* phi`` and the vacuum part
    ``gamma/N ((e^{d/2} - 1) e^{-d})^{1/2} <b_n, row> |exp(0)>``.
    """
    d, big_n = model.d, model.n
    phi = model.phi(row)
    c_signal = model.gamma / big_n * (-math.expm1(-0.5 * d))
    c_vac = model.gamma / big_n * math.sqrt(-math.expm1(-0.5 * d) * math.exp(-0.5 * d))
    overlap = np.vdot(model.b[n], np.asarray(row, dtype=complex))
    signal = c_signal * model.bob_correction(n, m, phi)
    vacuum = FockVector.vacuum(model.splitting.ambient_dim) * (c_vac * overlap)
    return signal, vacuum


def locality_residuals(model: TeleportModel, states: Sequence[QuditState]) -> dict:
    """How far Alice's and Bob's objects stray outside their regions.

    A vector has no particles outside region X exactly when it is invariant
    under second quantization of the projection onto X; the residuals are the
    norms of the change (relative for Bob's outputs).
    """
    s = model.splitting
    if not s.is_projection:
        raise ValueError("locality needs a projection-type splitting")
    p1 = np.diag(s.region_x1.astype(complex))
    p2 = np.diag(s.region_x2.astype(complex))
    alice_meas = max(norm(second_quantize(p1, v) - v) for row in model.measurement for v in row)
    alice_state = 0.0
    bob = 0.0
    for q in states:
        for row in q.rows:
            phi = model.phi(row)
            alice_state = max(alice_state, norm(second_quantize(p1, phi) - phi))
        for r in end_to_end(model, q, "coherent+filter", local=True, with_e1=False):
            for _, ket, _ in r.post_state.summands:
                bob = max(bob, norm(second_quantize(p2, ket) - ket) / norm(ket))
    return {"alice_measurement_outside_x1": alice_meas,
            "alice_state_outside_x1": alice_state,
            "bob_state_outside_x2": bob}
