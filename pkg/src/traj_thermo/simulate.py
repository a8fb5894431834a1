"""Monte-Carlo trajectory sampling and statevector circuit execution.

Randomness comes from :class:`CounterRNG`, a SplitMix64 generator evaluated
at explicit counters ``shot * stride + draw``. Every shot therefore owns a
fixed slice of the stream, and any split of the shots over workers gives the
same counts as a serial run.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .collision import SizeMismatch, TrajectoryDistribution
from .dilation import CircuitIR, CondUnitary2Q, Measure, Reset, StatePrep, Unitary2Q, Unitary3Q
from .doob import BiasedDynamics

MAX_LIVE_QUBITS = 12
THREADS_ENV = "TRAJ_THERMO_THREADS"

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class TooManyQubits(ValueError):
    pass


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class CounterRNG:
    """SplitMix64 output at arbitrary stream positions.

    Position ``i`` of the stream for ``seed`` is
    ``mix64(mix64(seed) + (i + 1) * 0x9E3779B97F4A7C15)`` (mod 2**64), and a
    uniform double is its top 53 bits times ``2**-53``.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        with np.errstate(over="ignore"):
            self.key = _mix64(np.array([self.seed & _MASK64], dtype=np.uint64))[0]

    def raw(self, counters: np.ndarray) -> np.ndarray:
        c = np.asarray(counters, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return _mix64(self.key + (c + np.uint64(1)) * _GOLDEN)

    def uniforms(self, shots: np.ndarray, draw: int, stride: int) -> np.ndarray:
        counters = np.asarray(shots, dtype=np.uint64) * np.uint64(stride) + np.uint64(draw)
        return (self.raw(counters) >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(eq=False)
class SampleRun:
    seed: int
    shots: int
    counts: TrajectoryDistribution


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    n = int(raw)
    return n if n > 0 else (os.cpu_count() or 1)


def _chunks(shots: int, workers: int) -> list[np.ndarray]:
    workers = max(1, min(workers, shots // 2000 or 1))
    return [c for c in np.array_split(np.arange(shots, dtype=np.int64), workers) if c.size]


def _merge(parts: list[np.ndarray], n: int, seed: int, shots: int) -> SampleRun:
    counts = np.sum(parts, axis=0).astype(float)
    return SampleRun(seed, shots, TrajectoryDistribution(n, counts, "sampled", shots))


def _sample_kraus_block(dyn: BiasedDynamics, shot_ids: np.ndarray, rng: CounterRNG) -> np.ndarray:
    m = shot_ids.size
    psi = np.broadcast_to(dyn.initial_state, (m, dyn.initial_state.size)).copy()
    index = np.zeros(m, dtype=np.int64)
    prev = np.zeros(m, dtype=bool)
    for draw, step in enumerate(dyn.steps):
        if step.conditioned:
            phi0 = np.where(prev[:, None], psi @ step.pair(1).k0.T, psi @ step.pair(0).k0.T)
            phi1 = np.where(prev[:, None], psi @ step.pair(1).k1.T, psi @ step.pair(0).k1.T)
        else:
            phi0 = psi @ step.pair().k0.T
            phi1 = psi @ step.pair().k1.T
        p0 = np.sum(np.abs(phi0) ** 2, axis=1)
        p1 = np.sum(np.abs(phi1) ** 2, axis=1)
        u = rng.uniforms(shot_ids, draw, dyn.n)
        outcome = u * (p0 + p1) >= p0
        chosen = np.where(outcome[:, None], phi1, phi0)
        norm = np.sqrt(np.where(outcome, p1, p0))
        psi = chosen / norm[:, None]
        index = 2 * index + outcome
        prev = outcome
    return np.bincount(index, minlength=2**dyn.n)


def sample_kraus(dyn: BiasedDynamics, shots: int, seed: int, workers: int | None = None) -> SampleRun:
    """Sample ``shots`` trajectories of the (biased) Kraus dynamics.

    At each step the outcome ``k`` is drawn with probability
    ``||K_k psi||**2`` and the state is renormalized. Shot ``j`` consumes
    stream positions ``j * N .. j * N + N - 1``.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = CounterRNG(seed)
    chunks = _chunks(shots, workers or thread_count())
    if len(chunks) == 1:
        parts = [_sample_kraus_block(dyn, chunks[0], rng)]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(lambda c: _sample_kraus_block(dyn, c, rng), chunks))
    return _merge(parts, dyn.n, seed, shots)


class RegisterState:
    """Batched statevector over the live qubits, one row per shot or branch.

    Qubits become live on first use (in ``|0>``, or in their measured value
    if they were measured and not reset) and are dropped right after being
    measured, so a classically controlled circuit never holds more than the
    system and one ancilla.
    """

    def __init__(self, batch: int, num_clbits: int):
        self.amps = np.ones((batch, 1), dtype=complex)
        self.live: list[int] = []
        self.weights = np.ones(batch)
        self.clbits = np.zeros((batch, num_clbits), dtype=np.int8)
        self.parked: dict[int, np.ndarray] = {}

    @property
    def batch(self) -> int:
        return self.amps.shape[0]

    def _tensor(self) -> np.ndarray:
        return self.amps.reshape((self.batch,) + (2,) * len(self.live))

    def _activate(self, q: int) -> None:
        if q in self.live:
            return
        if len(self.live) + 1 > MAX_LIVE_QUBITS:
            raise TooManyQubits(f"register would exceed {MAX_LIVE_QUBITS} live qubits")
        value = self.parked.pop(q, np.zeros(self.batch, dtype=np.int8))
        new = np.zeros((self.batch, self.amps.shape[1], 2), dtype=complex)
        rows = np.arange(self.batch)
        new[rows, :, value] = self.amps
        self.amps = new.reshape(self.batch, -1)
        self.live.append(q)

    def prep(self, q: int, amplitudes: np.ndarray) -> None:
        if q in self.live:
            raise ValueError(f"qubit q{q} is already in use")
        self._activate(q)
        t = self._tensor()
        axis = 1 + self.live.index(q)
        t = np.moveaxis(t, axis, -1)
        t = t[..., :1] * np.asarray(amplitudes, dtype=complex)
        self.amps = np.moveaxis(t, -1, axis).reshape(self.batch, -1)

    def apply(self, targets, matrix: np.ndarray, mask: np.ndarray | None = None) -> None:
        """Apply ``matrix`` to ``targets`` (first target most significant).

        With ``mask`` only rows where it is true are updated.
        """
        for q in targets:
            self._activate(q)
        t = self._tensor()
        axes = [1 + self.live.index(q) for q in targets]
        k = len(targets)
        moved = np.moveaxis(t, axes, list(range(t.ndim - k, t.ndim)))
        shape = moved.shape
        flat = moved.reshape(self.batch, -1, 2**k) @ matrix.T
        out = np.moveaxis(flat.reshape(shape), list(range(t.ndim - k, t.ndim)), axes)
        out = out.reshape(self.batch, -1)
        self.amps = out if mask is None else np.where(mask[:, None], out, self.amps)

    def _split_on(self, q: int):
        self._activate(q)
        t = self._tensor()
        axis = 1 + self.live.index(q)
        parts = [np.take(t, b, axis=axis).reshape(self.batch, -1) for b in (0, 1)]
        probs = [np.sum(np.abs(p) ** 2, axis=1) for p in parts]
        self.live.remove(q)
        return parts, probs

    def measure(self, q: int, clbit: int, uniforms: np.ndarray) -> None:
        parts, (p0, p1) = self._split_on(q)
        outcome = uniforms * (p0 + p1) >= p0
        chosen = np.where(outcome[:, None], parts[1], parts[0])
        norm = np.sqrt(np.where(outcome, p1, p0))
        self.amps = chosen / norm[:, None]
        self.clbits[:, clbit] = outcome
        self.parked[q] = outcome.astype(np.int8)

    def branch(self, q: int, clbit: int) -> None:
        """Replace every row by its two post-measurement branches, weighted."""
        parts, probs = self._split_on(q)
        amps, weights, clbits, value = [], [], [], []
        total = probs[0] + probs[1]
        for b in (0, 1):
            safe = np.where(probs[b] > 0, probs[b], 1.0)
            amps.append(parts[b] / np.sqrt(safe)[:, None])
            weights.append(self.weights * probs[b] / total)
            cb = self.clbits.copy()
            cb[:, clbit] = b
            clbits.append(cb)
            value.append(np.full(self.batch, b, dtype=np.int8))
        parked = {k: np.concatenate([v, v]) for k, v in self.parked.items()}
        self.amps = np.concatenate(amps)
        self.weights = np.concatenate(weights)
        self.clbits = np.concatenate(clbits)
        parked[q] = np.concatenate(value)
        self.parked = parked

    def reset(self, q: int) -> None:
        if q in self.live:
            # a live qubit may be entangled; reset = measure and flip back to |0>
            raise ValueError("reset is only supported on measured qubits")
        self.parked.pop(q, None)


def _execute(circuit: CircuitIR, reg: RegisterState, on_measure) -> None:
    for op in circuit.ops:
        if isinstance(op, StatePrep):
            reg.prep(op.target, op.amplitudes)
        elif isinstance(op, (Unitary2Q, Unitary3Q)):
            reg.apply(op.targets, op.matrix)
        elif isinstance(op, CondUnitary2Q):
            bit = reg.clbits[:, op.classical_bit].astype(bool)
            reg.apply(op.targets, op.matrix_if_0, ~bit)
            reg.apply(op.targets, op.matrix_if_1, bit)
        elif isinstance(op, Measure):
            on_measure(reg, op)
        elif isinstance(op, Reset):
            reg.reset(op.target)
        else:
            raise TypeError(f"unknown op {op!r}")


def _clbit_index(clbits: np.ndarray) -> np.ndarray:
    n = clbits.shape[1]
    return clbits.astype(np.int64) @ (1 << np.arange(n - 1, -1, -1, dtype=np.int64))


def _run_circuit_block(circuit: CircuitIR, shot_ids: np.ndarray, rng: CounterRNG) -> np.ndarray:
    n = circuit.num_clbits
    reg = RegisterState(shot_ids.size, n)
    draws = iter(range(n))

    def on_measure(r: RegisterState, op: Measure) -> None:
        r.measure(op.target, op.classical_bit, rng.uniforms(shot_ids, next(draws), n))

    _execute(circuit, reg, on_measure)
    return np.bincount(_clbit_index(reg.clbits), minlength=2**n)


def run_circuit(circuit: CircuitIR, shots: int, seed: int, workers: int | None = None) -> SampleRun:
    """Shot-based statevector execution with mid-circuit measurements.

    Counts are keyed by the classical register ``c0 c1 ...`` (``c0`` first,
    i.e. ``k_1``). Measurement ``j`` of shot ``i`` uses stream position
    ``i * num_clbits + j``.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if circuit.num_clbits == 0:
        raise ValueError("circuit has no measurements")
    rng = CounterRNG(seed)
    chunks = _chunks(shots, workers or thread_count())
    if len(chunks) == 1:
        parts = [_run_circuit_block(circuit, chunks[0], rng)]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(lambda c: _run_circuit_block(circuit, c, rng), chunks))
    return _merge(parts, circuit.num_clbits, seed, shots)


def circuit_distribution(circuit: CircuitIR) -> TrajectoryDistribution:
    """Exact outcome distribution by enumerating every measurement branch."""
    n = circuit.num_clbits
    reg = RegisterState(1, n)
    _execute(circuit, reg, lambda r, op: r.branch(op.target, op.classical_bit))
    probs = np.bincount(_clbit_index(reg.clbits), weights=reg.weights, minlength=2**n)
    return TrajectoryDistribution(n, probs, "exact")


def tv_distance(a: TrajectoryDistribution, b: TrajectoryDistribution) -> float:
    if a.n != b.n:
        raise SizeMismatch(f"distributions over N={a.n} and N={b.n}")
    return float(0.5 * np.sum(np.abs(a.probabilities() - b.probabilities())))


def _pool_bins(expected: np.ndarray, observed: np.ndarray, threshold: float):
    bins = sorted(zip(expected.tolist(), observed.tolist()))
    while len(bins) > 1 and bins[0][0] < threshold:
        (e0, o0), (e1, o1) = bins[0], bins[1]
        bins = sorted([(e0 + e1, o0 + o1)] + bins[2:])
    return bins


def chi2_gof(sample: SampleRun, exact: TrajectoryDistribution, min_expected: float = 5.0) -> tuple[float, int]:
    """Pearson statistic and degrees of freedom after pooling sparse bins.

    Bins with expected count below ``min_expected`` are merged smallest-first
    into the next smallest bin until every bin reaches the threshold.
    """
    if sample.counts.n != exact.n:
        raise SizeMismatch("sample and reference have different N")
    expected = sample.shots * exact.probabilities()
    bins = _pool_bins(expected, sample.counts.weights, min_expected)
    if len(bins) == 1:
        return 0.0, 0
    stat = sum((o - e) ** 2 / e for e, o in bins)
    return float(stat), len(bins) - 1


def chi2_band(dof: int, width: float = 4.0) -> tuple[float, float]:
    half = width * math.sqrt(2.0 * dof)
    return dof - half, dof + half
