"""Small dense complex linear algebra (dimensions 2, 4, 8).

Matrices are plain ``numpy`` arrays of dtype ``complex128``. The Hermitian
eigensolver is a cyclic complex Jacobi iteration, which is accurate to
roundoff for the tiny matrices used throughout the package; matrix
exponential and square root are built on top of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-10
    unitary: float = 1e-9
    isometry: float = 1e-9
    psd_clamp: float = 1e-10
    jacobi_offdiag: float = 1e-13
    jacobi_max_sweeps: int = 100
    inv_rcond: float = 1e-9
    completion_drop: float = 1e-8


TOL = Tolerances()


class LinalgError(ValueError):
    """Base class for precondition failures in this module."""


class NotHermitian(LinalgError):
    pass


class NotPSD(LinalgError):
    pass


class Singular(LinalgError):
    def __init__(self, cond: float):
        super().__init__(f"matrix is numerically singular (condition number {cond:.3e})")
        self.cond = cond


class NotIsometry(LinalgError):
    pass


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {m.shape}")
    return m


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(a).T


def is_hermitian(a, tol: float = TOL.hermitian) -> bool:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        return False
    return bool(np.max(np.abs(a - dagger(a)), initial=0.0) <= tol)


def is_unitary(a, tol: float = TOL.unitary) -> bool:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        return False
    return bool(np.linalg.norm(dagger(a) @ a - np.eye(a.shape[0])) <= tol)


def is_psd(a, tol: float = TOL.psd_clamp) -> bool:
    if not is_hermitian(a):
        return False
    return bool(herm_eig(a)[0][0] >= -tol)


def herm_eig(a, tol: Tolerances = TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition ``A = V diag(w) V^dagger`` of a Hermitian matrix.

    Cyclic Jacobi sweeps with complex plane rotations; sweeps stop once the
    off-diagonal Frobenius norm drops below ``tol.jacobi_offdiag`` relative
    to ``||A||_F`` (absolute floor of the same value). Eigenvalues are
    returned in ascending order.
    """
    a = as_matrix(a)
    n = a.shape[0]
    if a.shape != (n, n) or not is_hermitian(a, tol.hermitian):
        raise NotHermitian("herm_eig requires a Hermitian matrix")
    work = 0.5 * (a + dagger(a))
    vecs = np.eye(n, dtype=complex)
    threshold = tol.jacobi_offdiag * max(1.0, float(np.linalg.norm(work)))
    negligible = 1e-3 * threshold / n

    for _ in range(tol.jacobi_max_sweeps):
        off = np.sqrt(np.sum(np.abs(work - np.diag(np.diag(work))) ** 2))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = work[p, q]
                mag = abs(apq)
                if mag < negligible:
                    work[p, q] = work[q, p] = 0.0
                    continue
                phase = apq / mag
                app = work[p, p].real
                aqq = work[q, q].real
                diff = aqq - app
                if abs(diff) > 1e150 * mag:
                    # tau*tau would overflow; t -> 1/(2 tau)
                    t = mag / diff
                else:
                    tau = diff / (2.0 * mag)
                    t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot = np.eye(n, dtype=complex)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s * phase
                rot[q, p] = -s * np.conj(phase)
                work = dagger(rot) @ work @ rot
                work[p, q] = 0.0
                work[q, p] = 0.0
                vecs = vecs @ rot
    else:
        raise LinalgError("Jacobi iteration did not converge")

    w = np.real(np.diag(work)).copy()
    order = np.argsort(w, kind="stable")
    return w[order], vecs[:, order]


def _from_eig(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (v * w) @ dagger(v)


def mat_exp_mi(h) -> np.ndarray:
    """Return ``exp(-iH)`` for Hermitian ``H``."""
    w, v = herm_eig(h)
    return _from_eig(np.exp(-1j * w), v)


def mat_sqrt_psd(a, tol: Tolerances = TOL) -> np.ndarray:
    """Principal square root of a Hermitian positive semidefinite matrix.

    Eigenvalues in ``[-tol.psd_clamp, 0)`` are treated as roundoff and
    clamped to zero; anything more negative raises :class:`NotPSD`.
    """
    w, v = herm_eig(a, tol)
    if w[0] < -tol.psd_clamp:
        raise NotPSD(f"smallest eigenvalue {w[0]:.3e} is negative")
    s = _from_eig(np.sqrt(np.clip(w, 0.0, None)), v)
    return 0.5 * (s + dagger(s))


def condition_number(a) -> float:
    sv = np.linalg.svd(as_matrix(a), compute_uv=False)
    if sv[-1] == 0.0:
        return float("inf")
    return float(sv[0] / sv[-1])


def mat_inv(a, tol: Tolerances = TOL) -> np.ndarray:
    a = as_matrix(a)
    cond = condition_number(a)
    if not cond * tol.inv_rcond <= 1.0:
        raise Singular(cond)
    return np.linalg.inv(a)


def complete_isometry(v, tol: Tolerances = TOL) -> np.ndarray:
    """Extend an ``n x m`` isometry to an ``n x n`` unitary.

    The first ``m`` columns are copied verbatim. Candidates for the remaining
    columns are the standard basis vectors ``e_m, e_{m+1}, ..., e_{m-1}``
    (cyclically), each orthogonalized against all accepted columns with two
    passes of Gram-Schmidt; a candidate whose residual norm is below
    ``tol.completion_drop`` is skipped. The result is deterministic.
    """
    v = as_matrix(v)
    n, m = v.shape
    if m > n or np.linalg.norm(dagger(v) @ v - np.eye(m)) > tol.isometry:
        raise NotIsometry("columns are not orthonormal")
    out = np.zeros((n, n), dtype=complex)
    out[:, :m] = v
    filled = m
    for j in range(n):
        if filled == n:
            break
        cand = np.zeros(n, dtype=complex)
        cand[(m + j) % n] = 1.0
        for _ in range(2):
            cand = cand - out[:, :filled] @ (dagger(out[:, :filled]) @ cand)
        norm = np.linalg.norm(cand)
        if norm < tol.completion_drop:
            continue
        out[:, filled] = cand / norm
        filled += 1
    if filled != n:
        raise NotIsometry("could not complete the basis")
    return out


def normalize(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).ravel()
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return psi / norm
