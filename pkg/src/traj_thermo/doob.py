"""Trace-preserving biased dynamics from tilted collision maps.

The tilted map attaches a factor ``exp(-s O(k))`` to every trajectory and is
not trace preserving. Conjugating each step with Hermitian matrices ``G``
obtained from a backward recursion (final condition ``G_N = 1``) turns it
into a physical, possibly outcome-conditioned, Kraus dynamics whose
trajectory ensemble is exactly the reweighted one. The leftover
normalization sits in the initial state: ``||G_0 psi_0||**2 = Z(s)``.

Two energy families are supported: external fields ``O = p . k`` (Markovian,
time-dependent Kraus pairs) and the nearest-neighbour Ising energy
``O = sum_n sigma_n sigma_{n-1}`` (Kraus pairs conditioned on the previous
outcome).

Each ``G`` is stored as a matrix ``Ghat`` and a log-scale ``a`` with
``G = exp(a) * Ghat``. The scale stays zero unless a tilt exponent exceeds
``LOG_SPACE_THRESHOLD`` in magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bias import FIELD, NN, EnergySpec
from .collision import (
    KrausPair,
    SizeMismatch,
    TrajectoryDistribution,
    as_bits,
    ensure_length,
    state,
)
from .linalg import Singular, TOL, as_matrix, condition_number, dagger, mat_inv, mat_sqrt_psd, normalize

LOG_SPACE_THRESHOLD = 700.0
COMPLETENESS_TOL = 1e-9


class SingularG(ArithmeticError):
    def __init__(self, step: int, cond: float, detail: str = ""):
        msg = f"gauge matrix G at step {step} is singular (condition number {cond:.3e})"
        if detail:
            msg += f"; {detail}"
        super().__init__(msg)
        self.step = step
        self.cond = cond


class NoPhysicalConstruction(ValueError):
    pass


@dataclass(eq=False)
class GSequence:
    """Backward-recursion gauge matrices.

    ``variant == "field"``: ``g[n]`` is ``G_n`` for ``n = 0..N``.
    ``variant == "conditioned"``: ``g[n] = (G_{n|0}, G_{n|1})``.
    ``log_scale`` has shape ``(N + 1,)`` or ``(N + 1, 2)`` to match.
    """

    variant: str
    g: list
    log_scale: np.ndarray

    @property
    def n(self) -> int:
        return len(self.g) - 1

    def matrix(self, n: int, k: int | None = None) -> np.ndarray:
        """Full ``G_n`` (or ``G_{n|k}``) including its scale."""
        if self.variant == "field":
            return math.exp(self.log_scale[n]) * self.g[n]
        return math.exp(self.log_scale[n, k]) * self.g[n][k]

    def g0(self) -> tuple[np.ndarray, float]:
        if self.variant == "field":
            return self.g[0], float(self.log_scale[0])
        return self.g[0][0], float(self.log_scale[0, 0])


@dataclass(frozen=True, eq=False)
class Step:
    """Kraus pairs of one collision, one pair per previous outcome if conditioned."""

    pairs: tuple[KrausPair, ...]

    @property
    def conditioned(self) -> bool:
        return len(self.pairs) == 2

    def pair(self, prev: int | None = None) -> KrausPair:
        if not self.conditioned:
            return self.pairs[0]
        if prev is None:
            raise ValueError("conditioned step needs the previous outcome")
        return self.pairs[prev]


@dataclass(frozen=True, eq=False)
class BiasedDynamics:
    initial_state: np.ndarray
    steps: tuple[Step, ...]
    log_z: float = 0.0

    @property
    def n(self) -> int:
        return len(self.steps)

    def all_pairs(self):
        """Yield ``(step_number, condition, KrausPair)`` for every Kraus pair."""
        for n, step in enumerate(self.steps, start=1):
            for cond, pair in enumerate(step.pairs):
                yield n, (cond if step.conditioned else None), pair


def tilted_dual_apply(kraus: KrausPair, weight0: float, weight1: float, x) -> np.ndarray:
    """``weight0 K_0^+ X K_0 + weight1 K_1^+ X K_1``."""
    x = as_matrix(x)
    out = weight0 * (dagger(kraus.k0) @ x @ kraus.k0) + weight1 * (dagger(kraus.k1) @ x @ kraus.k1)
    return 0.5 * (out + dagger(out))


def _is_identity(m: np.ndarray) -> bool:
    return np.array_equal(m, np.eye(m.shape[0]))


def _backward_step(kraus: KrausPair, log_w: Sequence[float], g_next: Sequence[np.ndarray], step: int):
    """One recursion step ``sqrt(sum_k w_k K_k^+ G_k^2 K_k)``.

    ``log_w[k]`` already contains twice the log-scale of ``g_next[k]``.
    Returns ``(Ghat, log_scale)``.
    """
    if all(w == 0.0 for w in log_w) and all(_is_identity(g) for g in g_next):
        # dual of a trace-preserving map is unital
        return np.eye(2, dtype=complex), 0.0
    shift = max(log_w) if max(abs(w) for w in log_w) > LOG_SPACE_THRESHOLD else 0.0
    w = [math.exp(lw - shift) for lw in log_w]
    x = sum(
        w[k] * (dagger(kraus[k]) @ g_next[k] @ g_next[k] @ kraus[k]) for k in (0, 1)
    )
    g = mat_sqrt_psd(0.5 * (x + dagger(x)))
    cond = condition_number(g)
    if not cond * TOL.inv_rcond <= 1.0:
        raise SingularG(step - 1, cond, "the bias removes all weight along some state direction")
    return g, 0.5 * shift


def g_sequence_field(kraus: KrausPair, s: float, p, n: int) -> GSequence:
    """``G_{n-1} = sqrt(E*_{s_n}[G_n^2])`` with ``s_n = s p_n`` and ``G_N = 1``."""
    p = ensure_length(p, n, "field vector p")
    g: list = [None] * (n + 1)
    scale = np.zeros(n + 1)
    g[n] = np.eye(2, dtype=complex)
    for step in range(n, 0, -1):
        s_n = s * p[step - 1]
        two_a = 2.0 * scale[step]
        g[step - 1], a = _backward_step(kraus, (two_a, two_a - s_n), (g[step], g[step]), step)
        scale[step - 1] = a
    return GSequence("field", g, scale)


def _nn_log_weight(s: float, k: int, prev: int) -> float:
    # exp(-s sigma_n sigma_{n-1}), sigma = 1 - 2k
    return -s if k == prev else s


def g_sequence_nn(kraus: KrausPair, s: float, n: int) -> GSequence:
    """Conditioned recursion for the nearest-neighbour energy, ``G_{N|k} = 1``.

    The last step uses the unweighted first transfer entry, so both entries
    at ``n = 0`` come out of the same computation and are identical.
    """
    if n < 2:
        raise ValueError("nearest-neighbour energy needs N >= 2")
    eye = np.eye(2, dtype=complex)
    g: list = [None] * (n + 1)
    scale = np.zeros((n + 1, 2))
    g[n] = (eye, eye)
    for step in range(n, 1, -1):
        pair = []
        for prev in (0, 1):
            log_w = [_nn_log_weight(s, k, prev) + 2.0 * scale[step, k] for k in (0, 1)]
            gm, a = _backward_step(kraus, log_w, g[step], step)
            pair.append(gm)
            scale[step - 1, prev] = a
        g[step - 1] = tuple(pair)
    g0, a0 = _backward_step(kraus, [2.0 * scale[1, k] for k in (0, 1)], g[1], 1)
    g[0] = (g0, g0)
    scale[0] = a0
    return GSequence("conditioned", g, scale)


def _inverse(g: np.ndarray, step: int) -> np.ndarray:
    try:
        return mat_inv(g)
    except Singular as exc:
        raise SingularG(step, exc.cond) from exc


def _rotated_state(gseq: GSequence, psi0) -> tuple[np.ndarray, float]:
    g0, a0 = gseq.g0()
    v = g0 @ state(psi0)
    norm_sq = float(np.vdot(v, v).real)
    if norm_sq == 0.0:
        raise SingularG(0, float("inf"), "G_0 annihilates the initial state")
    return normalize(v), 2.0 * a0 + math.log(norm_sq)


def _scaled(log_factor: float, m: np.ndarray) -> np.ndarray:
    return m if log_factor == 0.0 else math.exp(log_factor) * m


def biased_dynamics_field(kraus: KrausPair, s: float, p, n: int, psi0, gseq: GSequence | None = None) -> BiasedDynamics:
    """Time-dependent Kraus pairs ``G_n K_0 G_{n-1}^-1`` and ``exp(-s_n/2) G_n K_1 G_{n-1}^-1``.

    ``gseq`` overrides the recursion (used for fault injection).
    """
    p = ensure_length(p, n, "field vector p")
    if gseq is None:
        gseq = g_sequence_field(kraus, s, p, n)
    steps = []
    for step in range(1, n + 1):
        left = gseq.g[step]
        right_inv = _inverse(gseq.g[step - 1], step - 1)
        da = gseq.log_scale[step] - gseq.log_scale[step - 1]
        k0 = _scaled(da, left @ kraus.k0 @ right_inv)
        k1 = _scaled(da - 0.5 * s * p[step - 1], left @ kraus.k1 @ right_inv)
        steps.append(Step((KrausPair(k0, k1),)))
    psi, log_z = _rotated_state(gseq, psi0)
    return BiasedDynamics(psi, tuple(steps), log_z)


def biased_dynamics_nn(kraus: KrausPair, s: float, n: int, psi0, gseq: GSequence | None = None) -> BiasedDynamics:
    if gseq is None:
        gseq = g_sequence_nn(kraus, s, n)
    g0_inv = _inverse(gseq.g[0][0], 0)
    first = KrausPair(
        *(
            _scaled(gseq.log_scale[1, k] - gseq.log_scale[0, 0], gseq.g[1][k] @ kraus[k] @ g0_inv)
            for k in (0, 1)
        )
    )
    steps = [Step((first,))]
    for step in range(2, n + 1):
        pairs = []
        for prev in (0, 1):
            right_inv = _inverse(gseq.g[step - 1][prev], step - 1)
            ops = []
            for k in (0, 1):
                log_f = (
                    0.5 * _nn_log_weight(s, k, prev)
                    + gseq.log_scale[step, k]
                    - gseq.log_scale[step - 1, prev]
                )
                ops.append(_scaled(log_f, gseq.g[step][k] @ kraus[k] @ right_inv))
            pairs.append(KrausPair(*ops))
        if all(np.array_equal(pairs[0][k], pairs[1][k]) for k in (0, 1)):
            # outcome-independent step (e.g. s = 0): keep the dynamics Markovian
            pairs = pairs[:1]
        steps.append(Step(tuple(pairs)))
    psi, log_z = _rotated_state(gseq, psi0)
    return BiasedDynamics(psi, tuple(steps), log_z)


def unbiased_dynamics(kraus: KrausPair, n: int, psi0) -> BiasedDynamics:
    return BiasedDynamics(state(psi0), tuple(Step((kraus,)) for _ in range(n)))


def biased_dynamics(kraus: KrausPair, spec: EnergySpec, n: int, psi0) -> BiasedDynamics:
    """Dispatch on the energy variant."""
    if spec.variant == FIELD:
        return biased_dynamics_field(kraus, spec.s, spec.p, n, psi0)
    if spec.variant == NN:
        return biased_dynamics_nn(kraus, spec.s, n, psi0)
    raise NoPhysicalConstruction(
        "biased dynamics is only constructed for field and nearest-neighbour energies; "
        "use bias.reweight for general pairwise couplings"
    )


def completeness_residuals(dyn: BiasedDynamics) -> list[tuple[int, int | None, float]]:
    return [(n, cond, pair.completeness_residual()) for n, cond, pair in dyn.all_pairs()]


def biased_trajectory_prob(dyn: BiasedDynamics, k) -> float:
    bits = as_bits(k)
    if len(bits) != dyn.n:
        raise SizeMismatch(f"trajectory length {len(bits)} != {dyn.n}")
    psi = dyn.initial_state
    prev = None
    for step, b in zip(dyn.steps, bits):
        psi = step.pair(prev)[b] @ psi
        prev = b
    return float(np.vdot(psi, psi).real)


def biased_ensemble(dyn: BiasedDynamics) -> TrajectoryDistribution:
    """Exact trajectory distribution of the biased process."""
    branches = dyn.initial_state[None, :]
    for step in dyn.steps:
        branches = _split(branches, step.pair(0), step.pair(1) if step.conditioned else step.pair())
    probs = np.sum(np.abs(branches) ** 2, axis=1)
    return TrajectoryDistribution(dyn.n, probs, "exact")


def _split(branches: np.ndarray, pair_if0: KrausPair, pair_if1: KrausPair) -> np.ndarray:
    prev = (np.arange(branches.shape[0]) & 1).astype(bool)
    nxt = np.empty((2 * branches.shape[0], branches.shape[1]), dtype=complex)
    for k in (0, 1):
        nxt[k::2] = np.where(prev[:, None], branches @ pair_if1[k].T, branches @ pair_if0[k].T)
    return nxt
