"""Stinespring dilation of biased Kraus pairs and the TRAJIR circuit format.

Qubit ``q0`` is the system. With the ``fresh`` ancilla policy step ``n``
collides with ancilla ``q{n}``; with ``reuse`` every step uses ``q1`` and
resets it after measurement. Step ``n`` writes classical bit ``c{n-1}``.

Two-qubit gate matrices use the index ``2 * system + ancilla``; three-qubit
gates use ``4 * control + 2 * system + target``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .collision import KrausPair
from .doob import BiasedDynamics
from .linalg import NotIsometry, complete_isometry, is_unitary

HEADER = "TRAJIR v1"
FRESH = "fresh"
REUSE = "reuse"


class NotCompletable(ValueError):
    pass


class IRFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StatePrep:
    target: int
    amplitudes: np.ndarray


@dataclass(frozen=True, eq=False)
class Unitary2Q:
    targets: tuple[int, int]
    matrix: np.ndarray


@dataclass(frozen=True, eq=False)
class CondUnitary2Q:
    classical_bit: int
    matrix_if_0: np.ndarray
    matrix_if_1: np.ndarray
    targets: tuple[int, int]


@dataclass(frozen=True, eq=False)
class Unitary3Q:
    """Coherent three-qubit gate (control ancilla, system, target ancilla)."""

    targets: tuple[int, int, int]
    matrix: np.ndarray


@dataclass(frozen=True)
class Measure:
    target: int
    classical_bit: int


@dataclass(frozen=True)
class Reset:
    target: int


GateOp = Union[StatePrep, Unitary2Q, CondUnitary2Q, Unitary3Q, Measure, Reset]


@dataclass(eq=False)
class CircuitIR:
    ancilla_policy: str = FRESH
    ops: list = field(default_factory=list)
    num_system_qubits: int = 1

    @property
    def num_qubits(self) -> int:
        qubits = {0}
        for op in self.ops:
            qubits.update(_op_qubits(op))
        return max(qubits) + 1

    @property
    def num_clbits(self) -> int:
        return sum(isinstance(op, Measure) for op in self.ops)

    def matrices(self):
        for op in self.ops:
            if isinstance(op, (Unitary2Q, Unitary3Q)):
                yield op.matrix
            elif isinstance(op, CondUnitary2Q):
                yield op.matrix_if_0
                yield op.matrix_if_1

    def __eq__(self, other) -> bool:
        if not isinstance(other, CircuitIR):
            return NotImplemented
        return self.ancilla_policy == other.ancilla_policy and _format_ops(self.ops) == _format_ops(other.ops)


def _op_qubits(op) -> tuple[int, ...]:
    if isinstance(op, (StatePrep, Measure, Reset)):
        return (op.target,)
    return tuple(op.targets)


def dilate(pair: KrausPair) -> np.ndarray:
    """Unitary ``U`` with ``<k_anc| U |0_anc> = K_k`` on the system.

    The isometry ``(K_0; K_1)`` (block row = ancilla outcome) is completed to
    a unitary in that block layout and then permuted into the
    ``2 * system + ancilla`` ordering.
    """
    iso = np.vstack([pair.k0, pair.k1])
    try:
        w = complete_isometry(iso)
    except NotIsometry as exc:
        raise NotCompletable(str(exc)) from exc
    # w[k*2 + s', a*2 + s] -> u[s'*2 + k, s*2 + a]
    return w.reshape(2, 2, 2, 2).transpose(1, 0, 3, 2).reshape(4, 4)


def extract_blocks(u: np.ndarray) -> KrausPair:
    blocks = u.reshape(2, 2, 2, 2)
    return KrausPair(blocks[:, 0, :, 0].copy(), blocks[:, 1, :, 0].copy())


def controlled_on_previous(u_if0: np.ndarray, u_if1: np.ndarray) -> np.ndarray:
    """``|0><0| (x) U_0 + |1><1| (x) U_1`` on (control, system, target)."""
    v = np.zeros((8, 8), dtype=complex)
    v[:4, :4] = u_if0
    v[4:, 4:] = u_if1
    return v


def build_circuit(dyn: BiasedDynamics, ancilla_policy: str = FRESH, coherent: bool = False) -> CircuitIR:
    """Lower a biased dynamics to a circuit.

    Default mode classically controls the conditioned steps on the previous
    measurement bit. ``coherent=True`` instead emits three-qubit gates
    controlled by the previous ancilla and defers all measurements to the
    end; it needs fresh ancillas.
    """
    if ancilla_policy not in (FRESH, REUSE):
        raise ValueError(f"unknown ancilla policy {ancilla_policy!r}")
    if coherent and ancilla_policy != FRESH:
        raise ValueError("coherent mode keeps every ancilla alive and requires the fresh policy")
    ops: list = [StatePrep(0, dyn.initial_state.copy())]
    deferred = []
    for n, step in enumerate(dyn.steps, start=1):
        anc = n if ancilla_policy == FRESH else 1
        if not step.conditioned:
            ops.append(Unitary2Q((0, anc), dilate(step.pair())))
        elif coherent:
            v = controlled_on_previous(dilate(step.pair(0)), dilate(step.pair(1)))
            ops.append(Unitary3Q((n - 1, 0, anc), v))
        else:
            ops.append(CondUnitary2Q(n - 2, dilate(step.pair(0)), dilate(step.pair(1)), (0, anc)))
        if coherent:
            deferred.append(Measure(anc, n - 1))
            continue
        ops.append(Measure(anc, n - 1))
        if ancilla_policy == REUSE:
            ops.append(Reset(anc))
    ops.extend(deferred)
    return CircuitIR(ancilla_policy, ops)


def check_unitaries(circuit: CircuitIR, tol: float = 1e-10) -> float:
    """Largest ``||U^+ U - 1||_F`` over all emitted gates."""
    worst = 0.0
    for m in circuit.matrices():
        worst = max(worst, float(np.linalg.norm(m.conj().T @ m - np.eye(m.shape[0]))))
    return worst


# --- TRAJIR v1 text format -------------------------------------------------


def _fmt_complex(values) -> str:
    return ",".join(f"{z.real:.17g},{z.imag:.17g}" for z in np.asarray(values).ravel())


def _qubits(qs) -> str:
    return ",".join(f"q{q}" for q in qs)


def _format_op(op) -> str:
    if isinstance(op, StatePrep):
        amps = ";".join(f"{z.real:.17g},{z.imag:.17g}" for z in op.amplitudes)
        return f"PREP q{op.target} {amps}"
    if isinstance(op, Unitary2Q):
        return f"U2 {_qubits(op.targets)} {_fmt_complex(op.matrix)}"
    if isinstance(op, Unitary3Q):
        return f"U3 {_qubits(op.targets)} {_fmt_complex(op.matrix)}"
    if isinstance(op, CondUnitary2Q):
        return (
            f"CU2 c{op.classical_bit} {_qubits(op.targets)} "
            f"{_fmt_complex(op.matrix_if_0)} | {_fmt_complex(op.matrix_if_1)}"
        )
    if isinstance(op, Measure):
        return f"M q{op.target} -> c{op.classical_bit}"
    if isinstance(op, Reset):
        return f"RESET q{op.target}"
    raise TypeError(f"unknown op {op!r}")


def _format_ops(ops) -> list[str]:
    return [_format_op(op) for op in ops]


def dumps_ir(circuit: CircuitIR, comments: tuple[str, ...] = ()) -> str:
    lines = [HEADER]
    lines += [f"# {c}" for c in comments]
    if circuit.ancilla_policy != FRESH:
        lines.append(f"POLICY {circuit.ancilla_policy}")
    lines += _format_ops(circuit.ops)
    return "\n".join(lines) + "\n"


def export_ir(circuit: CircuitIR, path, comments: tuple[str, ...] = ()) -> None:
    with open(os.fspath(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_ir(circuit, comments))


def _parse_qubit(tok: str) -> int:
    if not tok.startswith("q"):
        raise IRFormatError(f"bad qubit token {tok!r}")
    return int(tok[1:])


def _parse_clbit(tok: str) -> int:
    if not tok.startswith("c"):
        raise IRFormatError(f"bad classical bit token {tok!r}")
    return int(tok[1:])


def _parse_matrix(tok: str, dim: int) -> np.ndarray:
    vals = [float(x) for x in tok.split(",")]
    if len(vals) != 2 * dim * dim:
        raise IRFormatError(f"expected {dim * dim} complex entries, got {len(vals) / 2:g}")
    arr = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
    return arr.reshape(dim, dim)


def _parse_line(line: str):
    kind, _, rest = line.partition(" ")
    parts = rest.split()
    if kind == "PREP":
        amps = [tuple(float(x) for x in a.split(",")) for a in parts[1].split(";")]
        return StatePrep(_parse_qubit(parts[0]), np.array([complex(re, im) for re, im in amps]))
    if kind in ("U2", "U3"):
        qs = tuple(_parse_qubit(t) for t in parts[0].split(","))
        dim = 4 if kind == "U2" else 8
        cls = Unitary2Q if kind == "U2" else Unitary3Q
        return cls(qs, _parse_matrix(parts[1], dim))
    if kind == "CU2":
        if len(parts) != 5 or parts[3] != "|":
            raise IRFormatError(f"malformed CU2 line: {line!r}")
        qs = tuple(_parse_qubit(t) for t in parts[1].split(","))
        return CondUnitary2Q(_parse_clbit(parts[0]), _parse_matrix(parts[2], 4), _parse_matrix(parts[4], 4), qs)
    if kind == "M":
        if len(parts) != 3 or parts[1] != "->":
            raise IRFormatError(f"malformed measure line: {line!r}")
        return Measure(_parse_qubit(parts[0]), _parse_clbit(parts[2]))
    if kind == "RESET":
        return Reset(_parse_qubit(parts[0]))
    raise IRFormatError(f"unknown op {kind!r}")


def loads_ir(text: str) -> CircuitIR:
    lines = text.splitlines()
    if not lines or lines[0] != HEADER:
        raise IRFormatError(f"missing {HEADER!r} header")
    circuit = CircuitIR()
    for line in lines[1:]:
        if not line or line.startswith("#"):
            continue
        if line.startswith("POLICY "):
            circuit.ancilla_policy = line.split()[1]
            continue
        circuit.ops.append(_parse_line(line))
    return circuit


def import_ir(path) -> CircuitIR:
    with open(os.fspath(path), encoding="utf-8") as fh:
        return loads_ir(fh.read())


def validate_circuit(circuit: CircuitIR, tol: float = 1e-10) -> None:
    for m in circuit.matrices():
        if not is_unitary(m, tol):
            raise ValueError("circuit contains a non-unitary gate")
    bits = [op.classical_bit for op in circuit.ops if isinstance(op, Measure)]
    if bits != sorted(set(bits)):
        raise ValueError("classical bit indices must be strictly increasing")
