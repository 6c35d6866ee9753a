"""Linear models, Riccati synthesis, Van Loan discretization and the sampled LQG controller."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import linalg

from . import _kernels as K
from .constants import K_B


class SynthesisError(RuntimeError):
    pass


class ControllerVariant(str, Enum):
    NON_ADAPTIVE_1D = "NonAdaptive1D"
    ADAPTIVE_1D = "Adaptive1D"
    ADAPTIVE_2D = "Adaptive2D"


STATE_NAMES = {
    ControllerVariant.NON_ADAPTIVE_1D: ("x", "vx"),
    ControllerVariant.ADAPTIVE_1D: ("x", "vx", "apex"),
    ControllerVariant.ADAPTIVE_2D: ("x", "vx", "apex", "z", "vz"),
}
# slot of each state in the record layout (x, vx, apex, z, vz)
_EST_MAP = {
    ControllerVariant.NON_ADAPTIVE_1D: (0, 1, -1, -1, -1),
    ControllerVariant.ADAPTIVE_1D: (0, 1, 2, -1, -1),
    ControllerVariant.ADAPTIVE_2D: (0, 1, 2, 3, 4),
}


@dataclass(frozen=True)
class CalibratedModel:
    """Linearized plant around the apex as identified by calibration.

    ``k_over_m`` is the (negative) apex curvature divided by the mass.
    """

    m: float
    Gamma: float
    k_over_m: float
    omega_z: float
    cfx: float
    cfz: float
    c_xx: float
    c_xz: float
    c_zx: float
    c_zz: float
    T0: float
    sigma_x: float
    sigma_z: float
    sigma_w_apex: float

    def __post_init__(self):
        if not self.k_over_m < 0:
            raise ValueError("apex curvature must be negative")
        if not (self.m > 0 and self.Gamma >= 0 and self.omega_z > 0):
            raise ValueError("invalid oscillator parameters")
        if not (self.sigma_x > 0 and self.sigma_z > 0 and self.sigma_w_apex > 0):
            raise ValueError("noise intensities must be positive")

    @property
    def force_psd(self) -> float:
        """Two-sided thermal force intensity (N^2/Hz)."""
        return 2.0 * self.m * self.Gamma * K_B * self.T0


@dataclass(frozen=True)
class LqgWeights:
    """Quadratic cost weights; see ``lqr_weights`` for how Q is assembled."""

    r: float = 1e-9
    qz: float = 1.0

    def __post_init__(self):
        if not (self.r > 0 and self.qz >= 0):
            raise ValueError("r must be positive and qz non-negative")


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    Qw: np.ndarray
    C: np.ndarray
    R: np.ndarray
    names: tuple


def _x_rate(cal: CalibratedModel) -> float:
    return np.sqrt(-cal.k_over_m)


def build_error_model(cal: CalibratedModel) -> LinearModel:
    """Error-coordinate model (x - apex, vx, z, vz) used for the feedback law."""
    km = cal.k_over_m
    A = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [-km, -cal.Gamma, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, -cal.omega_z**2, -cal.Gamma],
        ]
    )
    B = np.array([[0.0], [cal.cfx / cal.m], [0.0], [cal.cfz / cal.m]])
    G = np.array([[0.0, 0.0], [1.0 / cal.m, 0.0], [0.0, 0.0], [0.0, 1.0 / cal.m]])
    Qw = np.diag([cal.force_psd, cal.force_psd])
    C = np.array([[cal.c_xx, 0.0, cal.c_xz, 0.0], [cal.c_zx, 0.0, cal.c_zz, 0.0]])
    R = np.diag([cal.sigma_x**2, cal.sigma_z**2])
    return LinearModel(A, B, G, Qw, C, R, ("x_err", "vx", "z", "vz"))


def build_augmented_model(cal: CalibratedModel, variant: ControllerVariant) -> LinearModel:
    """Estimator model for each controller variant; the apex is a random walk."""
    variant = ControllerVariant(variant)
    km, Gm, m = cal.k_over_m, cal.Gamma, cal.m
    if variant is ControllerVariant.NON_ADAPTIVE_1D:
        A = np.array([[0.0, 1.0], [-km, -Gm]])
        B = np.array([[0.0], [cal.cfx / m]])
        G = np.array([[0.0], [1.0 / m]])
        Qw = np.array([[cal.force_psd]])
        C = np.array([[cal.c_xx, 0.0]])
        R = np.array([[cal.sigma_x**2]])
    elif variant is ControllerVariant.ADAPTIVE_1D:
        A = np.array([[0.0, 1.0, 0.0], [-km, -Gm, km], [0.0, 0.0, 0.0]])
        B = np.array([[0.0], [cal.cfx / m], [0.0]])
        G = np.array([[0.0, 0.0], [1.0 / m, 0.0], [0.0, 1.0]])
        Qw = np.diag([cal.force_psd, cal.sigma_w_apex**2])
        C = np.array([[cal.c_xx, 0.0, 0.0]])
        R = np.array([[cal.sigma_x**2]])
    else:
        A = np.zeros((5, 5))
        A[0, 1] = 1.0
        A[1, :3] = [-km, -Gm, km]
        A[3, 4] = 1.0
        A[4, 3:] = [-cal.omega_z**2, -Gm]
        B = np.array([[0.0], [cal.cfx / m], [0.0], [0.0], [cal.cfz / m]])
        G = np.zeros((5, 3))
        G[1, 0] = G[4, 1] = 1.0 / m
        G[2, 2] = 1.0
        Qw = np.diag([cal.force_psd, cal.force_psd, cal.sigma_w_apex**2])
        C = np.array([[cal.c_xx, 0.0, 0.0, cal.c_xz, 0.0], [cal.c_zx, 0.0, 0.0, cal.c_zz, 0.0]])
        R = np.diag([cal.sigma_x**2, cal.sigma_z**2])
    return LinearModel(A, B, G, Qw, C, R, STATE_NAMES[variant])


# ---------------------------------------------------------------------------
# Riccati


def _unstabilizable_state(A, B, tol=1e-9):
    """Index of the dominant state in an uncontrollable non-stable mode, or None."""
    n = A.shape[0]
    w, V = linalg.eig(A.T)
    for lam, vec in zip(w, V.T):
        if lam.real < -tol * max(1.0, abs(lam)):
            continue
        # left eigenvector orthogonal to B means the mode cannot be moved
        resid = np.linalg.norm(vec.conj() @ B) / max(np.linalg.norm(B), 1e-300)
        if resid < tol:
            return int(np.argmax(np.abs(vec)))
    return None if n else None


def _symplectic_scaling(A, S, Q):
    """Diagonal state scaling d that balances the Hamiltonian [[A, -S], [-Q, -A^T]]."""
    n = A.shape[0]
    H = np.block([[A, -S], [-Q, -A.T]])
    _, (s, _) = linalg.matrix_balance(H, permute=False, separate=True)
    d = np.sqrt(s[:n] / s[n:])
    return d


def solve_care(A, B, Q, R, scale=None, names=None) -> np.ndarray:
    """Stabilizing solution of A^T P + P A - P B R^-1 B^T P + Q = 0.

    Uses the ordered real Schur form of the Hamiltonian matrix in a diagonally
    rescaled state basis.  ``scale`` overrides the automatic scaling.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(B)):
        raise SynthesisError("non-finite model matrices")
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise SynthesisError("input weight must be positive definite") from exc
    if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12 * max(np.abs(Q).max(), 1e-300):
        raise SynthesisError("state weight must be positive semidefinite")
    bad = _unstabilizable_state(A, B)
    if bad is not None:
        label = names[bad] if names else f"state {bad}"
        raise SynthesisError(f"pair is not stabilizable: unstable mode dominated by {label}")

    S = B @ np.linalg.solve(R, B.T)
    d = _symplectic_scaling(A, S, Q) if scale is None else np.asarray(scale, dtype=float)
    D = np.diag(d)
    Di = np.diag(1.0 / d)
    As = Di @ A @ D
    Ss = Di @ S @ Di
    Qs = D @ Q @ D
    H = np.block([[As, -Ss], [-Qs, -As.T]])
    T, U, sdim = linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise SynthesisError("Hamiltonian has eigenvalues on the imaginary axis")
    U11 = U[:n, :n]
    U21 = U[n:, :n]
    if np.linalg.cond(U11) > 1e14:
        raise SynthesisError("stable invariant subspace is not a graph")
    Ps = np.linalg.solve(U11.T, U21.T).T
    Ps = _newton_refine(As, Ss, Qs, 0.5 * (Ps + Ps.T))
    P = Di @ Ps @ Di
    return 0.5 * (P + P.T)


def _newton_refine(A, S, Q, P, steps: int = 3):
    """Newton corrections of a Riccati solution; a step is kept only if it lowers the residual."""
    n = A.shape[0]
    eye = np.eye(n)

    def resid(X):
        return A.T @ X + X @ A - X @ S @ X + Q

    r = np.linalg.norm(resid(P))
    for _ in range(steps):
        Ac = A - S @ P
        # (A - S P)^T dP + dP (A - S P) = -resid(P), solved by vectorization
        M = np.kron(eye, Ac.T) + np.kron(Ac.T, eye)
        try:
            dP = np.linalg.solve(M, -resid(P).reshape(-1, order="F")).reshape(n, n, order="F")
        except np.linalg.LinAlgError:
            break
        Pn = P + 0.5 * (dP + dP.T)
        rn = np.linalg.norm(resid(Pn))
        if not rn < r:
            break
        P, r = Pn, rn
    return P


def care_residual(A, B, Q, R, P) -> float:
    S = B @ np.linalg.solve(np.atleast_2d(R), B.T)
    return float(np.linalg.norm(A.T @ P + P @ A - P @ S @ P + Q))


WEIGHT_LENGTH = 1e-9  # m; quadratures are measured in this unit


def lqr_weights(cal: CalibratedModel, w: LqgWeights, states: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """State and input weights in SI coordinates.

    The diagonal weights Ox/2, qz Oz/2 act on the oscillator quadratures
    (x, vx/Ox) and (z, vz/Oz) expressed in nanometres.
    """
    ox = _x_rate(cal)
    oz = cal.omega_z
    q = np.array([ox / 2, ox / 2 / ox**2, w.qz * oz / 2, w.qz * oz / 2 / oz**2])[:states]
    return np.diag(q / WEIGHT_LENGTH**2), np.array([[w.r]])


def lqr_gain(cal: CalibratedModel, weights: LqgWeights, states: int = 4) -> np.ndarray:
    """Feedback row ``k`` with ``u = k @ xi_err`` minimizing the quadratic cost.

    ``states=2`` synthesizes on the x subsystem only.
    """
    em = build_error_model(cal)
    A = em.A[:states, :states]
    B = em.B[:states]
    Q, R = lqr_weights(cal, weights, states)
    pos = np.sqrt(K_B * cal.T0 / (cal.m * -cal.k_over_m))
    sc = np.array([pos, pos * _x_rate(cal), pos, pos * cal.omega_z])[:states]
    P = solve_care(A, B, Q, R, scale=sc, names=em.names[:states])
    return -(np.linalg.solve(R, B.T @ P)).ravel()


def _undetectable_state(A, C, tol=1e-9):
    return _unstabilizable_state(A.T, C.T, tol)


def kalman_gain(model: LinearModel, scale=None) -> tuple[np.ndarray, np.ndarray]:
    """Continuous steady-state filter gain and error covariance (L, P)."""
    bad = _undetectable_state(model.A, model.C)
    if bad is not None:
        raise SynthesisError(f"pair is not detectable: unobservable mode dominated by {model.names[bad]}")
    W = model.G @ model.Qw @ model.G.T
    sc = None if scale is None else 1.0 / np.asarray(scale, dtype=float)
    P = solve_care(model.A.T, model.C.T, W, model.R, scale=sc, names=model.names)
    L = P @ model.C.T @ np.linalg.inv(model.R)
    return L, P


# ---------------------------------------------------------------------------
# discretization


@dataclass(frozen=True)
class DiscreteModel:
    Ad: np.ndarray
    Bd: np.ndarray
    Qd: np.ndarray
    Cd: np.ndarray
    Rd: np.ndarray
    dt: float


def discretize(model: LinearModel, dt: float) -> DiscreteModel:
    """Zero-order-hold model and Van Loan process noise for sample period ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = model.A.shape[0]
    m = model.B.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = model.A
    M[:n, n:] = model.B
    E = linalg.expm(M * dt)
    Ad, Bd = E[:n, :n], E[:n, n:]
    W = model.G @ model.Qw @ model.G.T
    N = np.zeros((2 * n, 2 * n))
    N[:n, :n] = -model.A
    N[:n, n:] = W
    N[n:, n:] = model.A.T
    F = linalg.expm(N * dt)
    Ad2 = F[n:, n:].T
    Qd = Ad2 @ F[:n, n:]
    Qd = 0.5 * (Qd + Qd.T)
    return DiscreteModel(Ad, Bd, Qd, model.C.copy(), model.R / dt, dt)


def discrete_kalman_gain(dm: DiscreteModel, scale) -> tuple[np.ndarray, np.ndarray]:
    """Steady-state measurement-update gain of the sampled filter, and predicted covariance."""
    s = np.asarray(scale, dtype=float)
    Si = np.diag(1.0 / s)
    As = Si @ dm.Ad @ np.diag(s)
    Cs = dm.Cd @ np.diag(s)
    Qs = Si @ dm.Qd @ Si
    rs = np.sqrt(np.diag(dm.Rd))
    Cs = Cs / rs[:, None]
    Rs = dm.Rd / np.outer(rs, rs)
    try:
        Ps = linalg.solve_discrete_are(As.T, Cs.T, Qs, Rs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SynthesisError(f"discrete filter Riccati equation failed: {exc}") from exc
    Ls = Ps @ Cs.T @ np.linalg.inv(Cs @ Ps @ Cs.T + Rs)
    L = np.diag(s) @ Ls / rs[None, :]
    P = np.diag(s) @ Ps @ np.diag(s)
    return L, P


# ---------------------------------------------------------------------------
# the sampled controller


@dataclass
class Scaling:
    state: np.ndarray
    input: float
    output: np.ndarray


@dataclass
class DiscreteLqg:
    """Sampled LQG controller with apex projection and a pure input delay.

    ``step`` consumes one detector sample (chi_x, chi_z) and returns the
    command applied over the next interval, which is the one computed
    ``delay_samples`` updates earlier.
    """

    variant: ControllerVariant
    Ad: np.ndarray
    Bd: np.ndarray
    L: np.ndarray
    C: np.ndarray
    k: np.ndarray
    kaug: np.ndarray
    apex_idx: int
    apex_max: float
    delay_samples: int
    dt: float
    predict: bool = False
    ysel: np.ndarray = field(default_factory=lambda: np.array([0], dtype=np.int64))
    scaling: Scaling | None = None
    names: tuple = ()
    faults: int = 0

    def __post_init__(self):
        self.variant = ControllerVariant(self.variant)
        for name in ("Ad", "Bd", "L", "C", "k", "kaug"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))
        self.Bd = self.Bd.ravel()
        self.ysel = np.ascontiguousarray(self.ysel, dtype=np.int64)
        if self.delay_samples < 0:
            raise ValueError("delay must be non-negative")
        self.est_map = np.array(_EST_MAP[self.variant], dtype=np.int64)
        self.reset()

    @property
    def n(self) -> int:
        return self.Ad.shape[0]

    def reset(self):
        self.xhat = np.zeros(self.n)
        self.buf = np.zeros(self.delay_samples)
        self.head = np.zeros(1, dtype=np.int64)
        self.u_applied = np.zeros(1)
        self.faults = 0
        self._work = np.zeros((3, self.n))

    def step(self, chi) -> float:
        """One controller update from detector voltages ``chi = (chi_x, chi_z)``."""
        chi = np.asarray(chi, dtype=float)
        y = np.ascontiguousarray(chi[self.ysel])
        self.faults += K.lqg_update(
            self.Ad, self.Bd, self.L, self.C, self.kaug, self.apex_idx, self.apex_max, self.xhat,
            self.buf, self.head, self.u_applied, y, self.predict, self._work,
        )
        return float(self.u_applied[0])

    def closed_loop_error_matrix(self) -> np.ndarray:
        """Sampled closed loop (plant + filter) in error coordinates, delay excluded."""
        return _error_closed_loop(self)

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.closed_loop_error_matrix()))))


def _error_closed_loop(c: DiscreteLqg) -> np.ndarray:
    # plant state equals the model state; estimation error e = x - xhat.  The
    # apex random-walk mode is marginal by construction and is removed by
    # feeding back on (x - apex).
    n = c.n
    Ad, Bd, L, C = c.Ad, c.Bd.reshape(-1, 1), c.L, c.C
    I = np.eye(n)
    # x+ = Ad x + Bd k (x - e);  e+ = (I - L C) Ad e
    top = np.hstack([Ad + Bd @ c.kaug[None, :], -Bd @ c.kaug[None, :]])
    bot = np.hstack([np.zeros((n, n)), (I - L @ C) @ Ad])
    M = np.vstack([top, bot])
    if c.apex_idx < 0:
        return M
    # shift to error coordinates x -> x - apex and drop the apex plant mode
    T = np.eye(2 * n)
    T[0, c.apex_idx] = -1.0
    Mt = T @ M @ np.linalg.inv(T)
    keep = [i for i in range(2 * n) if i != c.apex_idx]
    return Mt[np.ix_(keep, keep)]


def estimator_matrix(c: DiscreteLqg) -> np.ndarray:
    """Error propagation of the predict/correct filter, e+ = (I - L C) Ad e."""
    return (np.eye(c.n) - c.L @ c.C) @ c.Ad


def apex_time_constant(c: DiscreteLqg) -> float | None:
    """Time constant (s) of the estimator mode dominated by the apex state; None without one.

    Modes are compared in units of the state magnitudes so that velocities
    do not swamp positions.
    """
    if c.apex_idx < 0:
        return None
    lam, V = np.linalg.eig(estimator_matrix(c))
    i = int(np.argmax(np.abs(V[c.apex_idx]) / np.linalg.norm(V, axis=0)))
    return float(-c.dt / np.log(np.abs(lam[i])))


def project_estimate(xhat, apex_idx: int, apex_max: float) -> np.ndarray:
    """Euclidean projection of an estimate onto the box |apex| <= apex_max.

    For a box constraint on one coordinate this is clipping that coordinate;
    the other states are returned unchanged.
    """
    out = np.array(xhat, dtype=float, copy=True)
    if apex_idx >= 0:
        out[..., apex_idx] = np.clip(out[..., apex_idx], -apex_max, apex_max)
    return out


def augmented_gain(k: np.ndarray, variant: ControllerVariant) -> np.ndarray:
    """Expand the error-state gain to the estimator state of ``variant``."""
    variant = ControllerVariant(variant)
    if variant is ControllerVariant.NON_ADAPTIVE_1D:
        return np.array([k[0], k[1]])
    if variant is ControllerVariant.ADAPTIVE_1D:
        return np.array([k[0], k[1], -k[0]])
    return np.array([k[0], k[1], -k[0], k[2], k[3]])


def estimator_scale(cal: CalibratedModel, variant: ControllerVariant, apex_scale: float) -> np.ndarray:
    pos = np.sqrt(K_B * cal.T0 / (cal.m * -cal.k_over_m))
    full = np.array([pos, pos * _x_rate(cal), apex_scale, pos, pos * cal.omega_z])
    return full[list(i for i in _EST_MAP[ControllerVariant(variant)] if i >= 0)]


def synthesize(
    cal: CalibratedModel,
    variant: ControllerVariant,
    weights: LqgWeights,
    dt: float,
    delay_samples: int,
    apex_max: float,
    predict: bool = False,
) -> DiscreteLqg:
    """Design the sampled controller for ``variant``."""
    variant = ControllerVariant(variant)
    states = 4 if variant is ControllerVariant.ADAPTIVE_2D else 2
    k = lqr_gain(cal, weights, states)
    model = build_augmented_model(cal, variant)
    dm = discretize(model, dt)
    L, _ = discrete_kalman_gain(dm, estimator_scale(cal, variant, apex_max))
    ysel = [0, 1] if variant is ControllerVariant.ADAPTIVE_2D else [0]
    apex_idx = 2 if variant is not ControllerVariant.NON_ADAPTIVE_1D else -1
    lqg = DiscreteLqg(
        variant=variant, Ad=dm.Ad, Bd=dm.Bd, L=L, C=dm.Cd, k=k, kaug=augmented_gain(k, variant),
        apex_idx=apex_idx, apex_max=apex_max, delay_samples=delay_samples, dt=dt, predict=predict,
        ysel=np.array(ysel), names=model.names,
    )
    rho = lqg.spectral_radius()
    if not rho < 1.0:
        raise SynthesisError(f"sampled closed loop is not stable (spectral radius {rho:.6f})")
    return lqg


# ---------------------------------------------------------------------------
# normalization and fixed-point study


def steady_state_std(cal: CalibratedModel, k: np.ndarray) -> np.ndarray:
    """Stationary std of (x_err, vx, z, vz) under full-state feedback ``k``."""
    em = build_error_model(cal)
    n = k.size
    A = em.A[:n, :n] + em.B[:n] @ k[None, :]
    W = (em.G @ em.Qw @ em.G.T)[:n, :n]
    S = linalg.solve_continuous_lyapunov(A, -W)
    return np.sqrt(np.clip(np.diag(S), 0, None)), S


def normalize_model(lqg: DiscreteLqg, cal: CalibratedModel) -> DiscreteLqg:
    """Return an equivalent controller whose states, input and outputs are O(1).

    States are divided by their stationary closed-loop std (the apex by
    ``apex_max``), the input by the stationary command std and each output by
    its stationary std.  The input/output map is unchanged.
    """
    n_err = lqg.k.size
    std, S = steady_state_std(cal, lqg.k)
    full = {"x": std[0], "vx": std[1]}
    if n_err == 4:
        full.update(z=std[2], vz=std[3])
    full["apex"] = lqg.apex_max
    s = np.array([full[nm] for nm in lqg.names])
    zero = ~(s > 0) | ~np.isfinite(s)
    if zero.any():
        warnings.warn("zero-variance state left unscaled", RuntimeWarning, stacklevel=2)
        s[zero] = 1.0
    su = float(np.sqrt(lqg.k @ S @ lqg.k))
    if not su > 0:
        warnings.warn("zero-variance input left unscaled", RuntimeWarning, stacklevel=2)
        su = 1.0
    em = build_error_model(cal)
    Cy = em.C[:, :n_err]
    sy = np.sqrt(np.diag(Cy @ S @ Cy.T) + np.diag(em.R) / lqg.dt)[lqg.ysel]
    Si = 1.0 / s
    Ad = lqg.Ad * Si[:, None] * s[None, :]
    Bd = lqg.Bd * Si * su
    C = lqg.C * s[None, :] / sy[:, None]
    L = lqg.L * Si[:, None] * sy[None, :]
    kaug = lqg.kaug * s / su
    k = lqg.k.copy()
    scaled = replace(
        lqg, Ad=Ad, Bd=Bd, L=L, C=C, kaug=kaug, k=k, apex_max=lqg.apex_max / (s[lqg.apex_idx] if lqg.apex_idx >= 0 else 1.0),
        scaling=Scaling(state=s, input=su, output=sy),
    )
    return scaled


class ScaledController:
    """Runs a normalized controller with physical inputs and outputs."""

    def __init__(self, scaled: DiscreteLqg):
        self.inner = scaled
        self.sc = scaled.scaling

    def reset(self):
        self.inner.reset()

    def step(self, chi) -> float:
        chi = np.asarray(chi, dtype=float).copy()
        chi[self.inner.ysel] = chi[self.inner.ysel] / self.sc.output
        return self.inner.step(chi) * self.sc.input


def quantization_report(lqg: DiscreteLqg, bits: int = 18) -> dict:
    """Largest relative coefficient error per matrix for signed fixed point with ``bits`` bits.

    Each matrix gets its own power-of-two full-scale just above its largest entry.
    """
    if bits < 2:
        raise ValueError("need at least two bits")
    out = {}
    for name in ("Ad", "Bd", "L", "kaug"):
        M = np.asarray(getattr(lqg, name), dtype=float)
        amax = float(np.max(np.abs(M)))
        if amax == 0:
            out[name] = 0.0
            continue
        fs = 2.0 ** np.ceil(np.log2(amax))
        lsb = fs / 2 ** (bits - 1)
        Mq = np.round(M / lsb) * lsb
        out[name] = float(np.max(np.abs(Mq - M)) / amax)
    return out


# ---------------------------------------------------------------------------
# artifact

ARTIFACT_FORMAT = "apexlqg-controller"
ARTIFACT_VERSION = 1


def export_controller(lqg: DiscreteLqg, path) -> None:
    """Write the controller as a versioned JSON text file with round-trip exact floats."""
    doc = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "variant": lqg.variant.value,
        "state_names": list(lqg.names),
        "dt_s": lqg.dt,
        "delay_samples": int(lqg.delay_samples),
        "apex_index": int(lqg.apex_idx),
        "apex_max": lqg.apex_max,
        "predict": bool(lqg.predict),
        "measured_channels": [int(i) for i in lqg.ysel],
        "Ad": lqg.Ad.tolist(),
        "Bd": lqg.Bd.tolist(),
        "L": lqg.L.tolist(),
        "C": lqg.C.tolist(),
        "k": lqg.k.tolist(),
        "k_aug": lqg.kaug.tolist(),
        "scaling": None
        if lqg.scaling is None
        else {
            "state": lqg.scaling.state.tolist(),
            "input": lqg.scaling.input,
            "output": np.asarray(lqg.scaling.output).tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_controller(path) -> DiscreteLqg:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != ARTIFACT_FORMAT:
        raise ValueError("not a controller artifact")
    if doc.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"unsupported controller artifact version {doc.get('version')}")
    sc = doc["scaling"]
    return DiscreteLqg(
        variant=doc["variant"], Ad=np.array(doc["Ad"]), Bd=np.array(doc["Bd"]), L=np.array(doc["L"]),
        C=np.array(doc["C"]), k=np.array(doc["k"]), kaug=np.array(doc["k_aug"]),
        apex_idx=doc["apex_index"], apex_max=doc["apex_max"], delay_samples=doc["delay_samples"],
        dt=doc["dt_s"], predict=doc["predict"], ysel=np.array(doc["measured_channels"]),
        names=tuple(doc["state_names"]),
        scaling=None if sc is None else Scaling(np.array(sc["state"]), sc["input"], np.array(sc["output"])),
    )
