"""Qubit collision model: Hamiltonian, Kraus operators and trajectory ensembles.

Composite system-ancilla indices are ``2 * system + ancilla`` (system is the
most significant qubit). Trajectory bitstrings list ``k_1`` first; in dense
arrays the bitstring ``k_1 ... k_N`` sits at the integer index whose binary
representation it is, so ``k_1`` is the most significant bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .linalg import (
    as_matrix,
    dagger,
    is_hermitian,
    is_psd,
    is_unitary,
    mat_exp_mi,
    normalize,
)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|
SIGMA_PLUS = SIGMA_MINUS.T.copy()
KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)

MAX_ENUMERATION_LENGTH = 20


class NotUnitary(ValueError):
    pass


class InvalidState(ValueError):
    pass


class LengthTooLarge(ValueError):
    pass


class SizeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    omega: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.omega) and np.isfinite(self.kappa)):
            raise ValueError("omega and kappa must be finite")


@dataclass(frozen=True, eq=False)
class KrausPair:
    k0: np.ndarray
    k1: np.ndarray

    def __iter__(self):
        return iter((self.k0, self.k1))

    def __getitem__(self, k: int) -> np.ndarray:
        return (self.k0, self.k1)[k]

    def completeness_residual(self) -> float:
        s = dagger(self.k0) @ self.k0 + dagger(self.k1) @ self.k1
        return float(np.linalg.norm(s - np.eye(s.shape[0])))


def as_bits(k) -> tuple[int, ...]:
    """Normalize a trajectory given as ``"0110"`` or a sequence of 0/1."""
    if isinstance(k, str):
        bits = tuple(int(c) for c in k)
    else:
        bits = tuple(int(b) for b in k)
    if not bits or any(b not in (0, 1) for b in bits):
        raise ValueError(f"invalid trajectory {k!r}")
    return bits


def bitstring(index: int, n: int) -> str:
    return format(index, f"0{n}b")


def all_bits(n: int) -> np.ndarray:
    """``(2**n, n)`` array of all trajectories in index order."""
    idx = np.arange(2**n)
    shifts = np.arange(n - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).astype(np.int64)


@dataclass(eq=False)
class TrajectoryDistribution:
    """Weights over all ``2**n`` bitstrings, stored densely by index.

    ``kind`` is ``"exact"`` (probabilities) or ``"sampled"`` (counts).
    """

    n: int
    weights: np.ndarray
    kind: str = "exact"
    shots: int | None = field(default=None)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (2**self.n,):
            raise SizeMismatch(f"expected {2**self.n} weights, got {self.weights.shape}")
        if self.kind not in ("exact", "sampled"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    def probabilities(self) -> np.ndarray:
        total = self.weights.sum()
        return self.weights / total if self.kind == "sampled" else self.weights

    def as_dict(self) -> dict[str, float]:
        """Bitstring-keyed view; sampled distributions list observed keys only."""
        items = enumerate(self.weights)
        if self.kind == "sampled":
            return {bitstring(i, self.n): float(w) for i, w in items if w > 0}
        return {bitstring(i, self.n): float(w) for i, w in items}

    def __getitem__(self, k) -> float:
        bits = as_bits(k)
        if len(bits) != self.n:
            raise SizeMismatch(f"trajectory length {len(bits)} != {self.n}")
        return float(self.weights[int("".join(map(str, bits)), 2)])

    def step_marginals(self) -> np.ndarray:
        """Probability of ``k_n = 1`` for each step ``n``."""
        return self.probabilities() @ all_bits(self.n)


def build_hamiltonian(params: ModelParams) -> np.ndarray:
    """Collision Hamiltonian ``omega sx_S + kappa (s+ s- + s- s+)``.

    The drive acts on the system qubit (it is what survives as a Rabi term
    of the system in the short-collision limit); the exchange term is
    symmetric under swapping the two qubits.
    """
    eye = np.eye(2)
    h = params.omega * np.kron(SIGMA_X, eye) + params.kappa * (
        np.kron(SIGMA_PLUS, SIGMA_MINUS) + np.kron(SIGMA_MINUS, SIGMA_PLUS)
    )
    return h.astype(complex)


def collision_unitary(params: ModelParams) -> np.ndarray:
    return mat_exp_mi(build_hamiltonian(params))


def kraus_from_unitary(u) -> KrausPair:
    """Kraus operators ``K_k[s', s] = <s', k| U |s, 0>`` of one collision."""
    u = as_matrix(u)
    if u.shape != (4, 4) or not is_unitary(u):
        raise NotUnitary("collision unitary must be a 4x4 unitary")
    blocks = u.reshape(2, 2, 2, 2)  # [s', k, s, a]
    return KrausPair(blocks[:, 0, :, 0].copy(), blocks[:, 1, :, 0].copy())


def model_kraus(params: ModelParams) -> KrausPair:
    return kraus_from_unitary(collision_unitary(params))


def state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).ravel()
    if abs(np.linalg.norm(psi) - 1.0) > 1e-12:
        raise InvalidState("initial state must be normalized")
    return psi


def trajectory_prob(kraus: KrausPair, psi0, k) -> float:
    psi = state(psi0)
    for b in as_bits(k):
        psi = kraus[b] @ psi
    return float(np.vdot(psi, psi).real)


def propagate_branches(ops: Sequence[tuple[np.ndarray, np.ndarray]], psi0) -> np.ndarray:
    """Unnormalized states for every outcome prefix.

    ``ops[n]`` is the ``(K_0, K_1)`` pair of step ``n + 1``. Returns an array
    of shape ``(2**N, dim)``; each step doubles the branch set with two
    batched matrix products instead of recomputing whole Kraus strings.
    """
    branches = np.asarray(psi0, dtype=complex)[None, :]
    for k0, k1 in ops:
        nxt = np.empty((2 * branches.shape[0], branches.shape[1]), dtype=complex)
        nxt[0::2] = branches @ k0.T
        nxt[1::2] = branches @ k1.T
        branches = nxt
    return branches


def enumerate_ensemble(kraus: KrausPair, psi0, n: int) -> TrajectoryDistribution:
    if n < 1:
        raise ValueError("trajectory length must be >= 1")
    if n > MAX_ENUMERATION_LENGTH:
        raise LengthTooLarge(f"N={n} exceeds the enumeration limit {MAX_ENUMERATION_LENGTH}")
    branches = propagate_branches([(kraus.k0, kraus.k1)] * n, state(psi0))
    probs = np.sum(np.abs(branches) ** 2, axis=1)
    return TrajectoryDistribution(n, probs, "exact")


def average_map(kraus: KrausPair, rho) -> np.ndarray:
    rho = as_matrix(rho)
    if not is_hermitian(rho) or abs(np.trace(rho) - 1.0) > 1e-10 or not is_psd(rho):
        raise InvalidState("rho must be a normalized density matrix")
    return sum(k @ rho @ dagger(k) for k in kraus)


def iterate_average_map(kraus: KrausPair, rho, steps: int) -> np.ndarray:
    for _ in range(steps):
        rho = average_map(kraus, rho)
    return rho


def ensure_length(values: Iterable[float], n: int, what: str) -> np.ndarray:
    arr = np.asarray(list(values), dtype=float)
    if arr.shape != (n,):
        raise SizeMismatch(f"{what} has length {arr.size}, expected {n}")
    return arr


__all__ = [
    "KET0",
    "KET1",
    "KrausPair",
    "ModelParams",
    "TrajectoryDistribution",
    "all_bits",
    "as_bits",
    "average_map",
    "bitstring",
    "build_hamiltonian",
    "collision_unitary",
    "enumerate_ensemble",
    "kraus_from_unitary",
    "model_kraus",
    "normalize",
    "trajectory_prob",
]
