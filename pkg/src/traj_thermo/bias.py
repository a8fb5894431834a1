"""Ising-like trajectory "energies" and the exactly reweighted ensemble."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .collision import SizeMismatch, TrajectoryDistribution, all_bits, as_bits

FIELD = "field"
PAIRWISE = "pairwise"
NN = "nn"
VARIANTS = (FIELD, PAIRWISE, NN)

ENERGY_DECIMALS = 9


class DegenerateNormalization(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class EnergySpec:
    """Energy function over trajectories together with the bias strength ``s``.

    ``q`` is an ``N x N`` array of which only the entries ``q[n, m]`` with
    ``n > m`` are read.
    """

    variant: str
    s: float = 0.0
    p: np.ndarray | None = None
    q: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown energy variant {self.variant!r}")
        if self.variant in (FIELD, PAIRWISE):
            if self.p is None:
                raise ValueError(f"{self.variant} energy needs a field vector p")
            object.__setattr__(self, "p", np.asarray(self.p, dtype=float).ravel())
        if self.variant == PAIRWISE:
            n = self.p.size
            q = np.zeros((n, n)) if self.q is None else np.asarray(self.q, dtype=float)
            if q.shape != (n, n):
                raise SizeMismatch(f"q must be {n}x{n}, got {q.shape}")
            object.__setattr__(self, "q", np.tril(q, -1))

    @classmethod
    def field(cls, p, s: float = 0.0) -> "EnergySpec":
        return cls(FIELD, s, p)

    @classmethod
    def pairwise(cls, p, q, s: float = 0.0) -> "EnergySpec":
        return cls(PAIRWISE, s, p, q)

    @classmethod
    def nearest_neighbor(cls, s: float = 0.0) -> "EnergySpec":
        return cls(NN, s)

    def with_s(self, s: float) -> "EnergySpec":
        return EnergySpec(self.variant, s, self.p, self.q)

    def check_length(self, n: int) -> None:
        if self.p is not None and self.p.size != n:
            raise SizeMismatch(f"energy is sized for N={self.p.size}, trajectory has N={n}")

    def energies(self, bits: np.ndarray) -> np.ndarray:
        """Energies of a ``(M, N)`` array of 0/1 trajectories."""
        bits = np.asarray(bits)
        self.check_length(bits.shape[1])
        if self.variant == NN:
            sigma = 1 - 2 * bits
            return np.sum(sigma[:, 1:] * sigma[:, :-1], axis=1).astype(float)
        e = bits @ self.p
        if self.variant == PAIRWISE:
            e = e + np.einsum("in,nm,im->i", bits, self.q, bits)
        return e


def uniform_field(n: int) -> np.ndarray:
    return np.ones(n)


def staggered_field(n: int) -> np.ndarray:
    """``p_n = (-1)**n`` for ``n = 1..N``."""
    return np.array([(-1.0) ** i for i in range(1, n + 1)])


def random_field(n: int, seed: int) -> np.ndarray:
    """Random ``p_n in {-1, +1}``, reproducible through numpy's PCG64."""
    rng = np.random.default_rng(seed)
    return rng.choice(np.array([-1.0, 1.0]), size=n)


def energy(spec: EnergySpec, k) -> float:
    bits = np.array([as_bits(k)])
    return float(spec.energies(bits)[0])


def _tilt_weights(dist: TrajectoryDistribution, spec: EnergySpec) -> np.ndarray:
    if spec.s == 0.0:
        return dist.probabilities().copy()
    probs = dist.probabilities()
    out = np.zeros_like(probs)
    live = probs > 0
    # zero-probability trajectories stay zero even when the tilt overflows
    with np.errstate(over="ignore"):
        out[live] = probs[live] * np.exp(-spec.s * spec.energies(all_bits(dist.n)[live]))
    return out


def mgf(dist: TrajectoryDistribution, spec: EnergySpec) -> float:
    """Normalization ``Z(s) = sum_k P(k) exp(-s O(k))``."""
    return float(_tilt_weights(dist, spec).sum())


def reweight(dist: TrajectoryDistribution, spec: EnergySpec) -> TrajectoryDistribution:
    if dist.kind != "exact":
        raise ValueError("reweighting requires an exact distribution")
    if spec.s == 0.0:
        return TrajectoryDistribution(dist.n, dist.weights.copy(), "exact")
    w = _tilt_weights(dist, spec)
    z = w.sum()
    if not z >= 1e-300:
        raise DegenerateNormalization(f"normalization Z={z:.3e} vanishes")
    return TrajectoryDistribution(dist.n, w / z, "exact")


def marginal_energy_histogram(dist: TrajectoryDistribution, spec: EnergySpec) -> dict[float, float]:
    """Total probability per distinct energy value, keys rounded to 1e-9.

    Energies carried only by zero-probability trajectories are left out.
    """
    e = np.round(spec.energies(all_bits(dist.n)), ENERGY_DECIMALS) + 0.0
    probs = dist.probabilities()
    hist: dict[float, float] = {}
    for value, prob in zip(e.tolist(), probs.tolist()):
        if prob == 0.0:
            continue
        hist[value] = hist.get(value, 0.0) + prob
    return dict(sorted(hist.items()))
