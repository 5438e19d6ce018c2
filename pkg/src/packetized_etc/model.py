"""Plant, cost weights, dead-beat controller synthesis and the Lyapunov solver.

The plant is the discrete-time linear system

    x[k+1] = A x[k] + B u[k] + w[k],   w ~ N(0, Sigma_w),   x[0] ~ N(0, Sigma_0)

and the controller is a dead-beat gain K (A + BK nilpotent) whose packet
carries the nu future inputs {K x, K Ac x, ..., K Ac^(nu-1) x}, Ac = A + BK.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import (
    DimensionMismatch,
    MultiInputUnsupported,
    NotControllable,
    NotNilpotent,
    SingularA,
    UnstableArgument,
)

NILPOTENCY_TOL = 1e-8
PSD_TOL = 1e-8


def _as_matrix(value, name, shape=None):
    arr = np.array(value, dtype=float, ndmin=2)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    if shape is not None and arr.shape != shape:
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
    arr.setflags(write=False)
    return arr


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def check_psd(M, name, tol=PSD_TOL):
    """Raise ValueError unless ``M`` is symmetric PSD within a relative tolerance."""
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if not np.allclose(M, M.T, atol=tol * scale, rtol=0.0):
        raise ValueError(f"{name} is not symmetric")
    lam_min = float(np.min(np.linalg.eigvalsh((M + M.T) / 2)))
    if lam_min < -tol * scale:
        raise ValueError(f"{name} is not positive semi-definite (min eigenvalue {lam_min:.3e})")


def spectral_radius(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return float(np.max(np.abs(np.linalg.eigvals(A))))


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Plant matrices and Gaussian noise statistics."""

    A: np.ndarray
    B: np.ndarray
    Sigma_w: np.ndarray
    Sigma_0: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        B = np.array(self.B, dtype=float)
        if B.ndim == 1 or (B.ndim == 0):
            B = B.reshape(n, -1)
        B = _as_matrix(B, "B")
        if B.shape[0] != n:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, A has {n}")
        Sw = _as_matrix(self.Sigma_w, "Sigma_w", (n, n))
        S0 = _as_matrix(self.Sigma_0, "Sigma_0", (n, n))
        if np.linalg.matrix_rank(B) < B.shape[1]:
            raise ValueError("B must have full column rank")
        check_psd(Sw, "Sigma_w")
        check_psd(S0, "Sigma_0")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Sigma_w", Sw)
        object.__setattr__(self, "Sigma_0", S0)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @classmethod
    def scalar(cls, a, b, sigma_w2, sigma_02=0.0) -> "LinearSystem":
        return cls([[a]], [[b]], [[sigma_w2]], [[sigma_02]])


@dataclass(frozen=True, eq=False)
class CostWeights:
    """Weights of the average cost x'Q_x x + rho u'Q_u u."""

    Q_x: np.ndarray
    Q_u: np.ndarray
    rho: float = 0.0

    def __post_init__(self):
        Qx = _as_matrix(self.Q_x, "Q_x")
        Qu = _as_matrix(self.Q_u, "Q_u")
        if Qx.shape[0] != Qx.shape[1] or Qu.shape[0] != Qu.shape[1]:
            raise DimensionMismatch("Q_x and Q_u must be square")
        check_psd(Qx, "Q_x")
        check_psd(Qu, "Q_u")
        if np.min(np.linalg.eigvalsh(Qu)) <= 0:
            raise ValueError("Q_u must be positive definite")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        object.__setattr__(self, "Q_x", Qx)
        object.__setattr__(self, "Q_u", Qu)
        object.__setattr__(self, "rho", float(self.rho))

    def transmit_weight(self, K) -> np.ndarray:
        """Q_x + rho K'Q_u K: the state weight at steps where u = K x is applied."""
        K = np.atleast_2d(K)
        return self.Q_x + self.rho * K.T @ self.Q_u @ K


@dataclass(frozen=True, eq=False)
class DeadBeatController:
    K: np.ndarray
    nu: int
    Ac: np.ndarray


def _min_singular(A):
    return float(linalg.svdvals(A)[-1])


def controllability_index(sys: LinearSystem, tol: float = 1e-10) -> int:
    """Smallest nu with rank [A^-1 B, ..., A^-nu B] = n.

    Requires A invertible; a singular A is rejected rather than handled by
    a different test.
    """
    A, B, n = sys.A, sys.B, sys.n
    if _min_singular(A) <= tol * max(1.0, np.linalg.norm(A, 2)):
        raise SingularA("A is singular; the inverse-power rank test does not apply")
    Ainv = np.linalg.inv(A)
    blocks = []
    P = np.eye(n)
    for nu in range(1, n + 1):
        P = Ainv @ P
        blocks.append(P @ B)
        if np.linalg.matrix_rank(np.hstack(blocks)) == n:
            return nu
    raise NotControllable(f"rank [A^-1 B ... A^-n B] < {n}")


def validate_deadbeat_gain(sys: LinearSystem, K, nu: int, tol: float = NILPOTENCY_TOL
                           ) -> DeadBeatController:
    K = _as_matrix(K, "K", (sys.m, sys.n))
    nu = int(nu)
    if not 1 <= nu <= sys.n:
        raise ValueError(f"nu must lie in [1, {sys.n}], got {nu}")
    Ac = sys.A + sys.B @ K
    residual = float(np.linalg.norm(np.linalg.matrix_power(Ac, nu), "fro"))
    bound = tol * (1.0 + np.linalg.norm(sys.A, "fro") ** nu)
    if residual > bound:
        raise NotNilpotent(residual, bound)
    return DeadBeatController(K=K, nu=nu, Ac=_frozen(Ac))


def synthesize_deadbeat_gain(sys: LinearSystem) -> DeadBeatController:
    """Single-input Ackermann placement of every closed-loop pole at the origin."""
    if sys.m != 1:
        raise MultiInputUnsupported(
            "dead-beat synthesis supports m = 1 only; pass a gain to validate_deadbeat_gain"
        )
    A, B, n = sys.A, sys.B, sys.n
    ctrb = np.hstack([np.linalg.matrix_power(A, j) @ B for j in range(n)])
    if np.linalg.matrix_rank(ctrb) < n:
        raise NotControllable("(A, B) is not controllable")
    last_row = np.linalg.solve(ctrb.T, np.eye(n)[:, -1]).reshape(1, n)
    K = -last_row @ np.linalg.matrix_power(A, n)
    # Companion form with characteristic polynomial z^n: nilpotent of index exactly n.
    return validate_deadbeat_gain(sys, K, n)


def lyap_solve(A, Q) -> np.ndarray:
    """PSD solution X of A X A' - X + Q = 0 for Schur-stable A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if A.shape != Q.shape or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"A {A.shape} and Q {Q.shape} must be square and conform")
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise UnstableArgument(f"spectral radius {rho:.6g} >= 1")
    X = linalg.solve_discrete_lyapunov(A, Q)
    return (X + X.T) / 2


def control_sequence(ctrl: DeadBeatController, x) -> list[np.ndarray]:
    """The packet {K x, K Ac x, ..., K Ac^(nu-1) x}."""
    x = np.asarray(x, dtype=float).reshape(-1)
    out = []
    for _ in range(ctrl.nu):
        out.append(ctrl.K @ x)
        x = ctrl.Ac @ x
    return out
