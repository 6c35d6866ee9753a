"""Stochastic particle dynamics, detection model, drifts and the sampled closed loop."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .constants import K_B
from .potential import PotentialParams, find_apex

STREAMS = ("thermal-x", "thermal-y", "thermal-z", "measurement-x", "measurement-z", "drift")

RECORD_COLUMNS = (
    ("t", "s"),
    ("x", "m"),
    ("y", "m"),
    ("z", "m"),
    ("vx", "m/s"),
    ("vy", "m/s"),
    ("vz", "m/s"),
    ("chi_x", "V"),
    ("chi_z", "V"),
    ("u", "V"),
    ("xhat_x", "m"),
    ("xhat_vx", "m/s"),
    ("xhat_apex", "m"),
    ("xhat_z", "m"),
    ("xhat_vz", "m/s"),
    ("delta0", "m"),
    ("delta1", "m"),
    ("delta_chi_x", "V"),
    ("apex_true", "m"),
)
COLUMN_NAMES = tuple(c for c, _ in RECORD_COLUMNS)
COL = {c: i for i, c in enumerate(COLUMN_NAMES)}


class ParticleLost(RuntimeError):
    pass


class NumericalBlowUp(FloatingPointError):
    pass


@dataclass(frozen=True)
class ParticleParams:
    m: float
    gamma: float
    T0: float
    cf: tuple[float, float, float]

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass must be positive")
        if self.gamma < 0:
            raise ValueError("damping must be non-negative")
        if not self.T0 > 0:
            raise ValueError("temperature must be positive")
        if len(self.cf) != 3:
            raise ValueError("cf needs three components")

    @property
    def Gamma(self) -> float:
        return self.gamma / self.m

    @property
    def thermal_psd(self) -> float:
        """Two-sided force noise intensity 2 gamma k_B T0 (N^2/Hz)."""
        return 2.0 * self.gamma * K_B * self.T0

    @classmethod
    def from_rate(cls, m, Gamma, T0, cf):
        return cls(m=m, gamma=Gamma * m, T0=T0, cf=tuple(float(c) for c in cf))


@dataclass(frozen=True)
class DetectionConfig:
    c: tuple  # 2x3 nested tuple, V/m
    x_nl: float
    sigma_x: float
    sigma_z: float
    drift_rate_max: float = 1e-4

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.shape != (2, 3):
            raise ValueError("detection matrix must be 2x3")
        if not (abs(c[0, 0]) > abs(c[0, 1]) and abs(c[0, 0]) > abs(c[0, 2])):
            raise ValueError("x channel must be dominated by c_xx")
        if not (abs(c[1, 2]) > abs(c[1, 0]) and abs(c[1, 2]) > abs(c[1, 1])):
            raise ValueError("z channel must be dominated by c_zz")
        if not self.x_nl > 0:
            raise ValueError("x_nl must be positive")
        if not (self.sigma_x > 0 and self.sigma_z > 0):
            raise ValueError("measurement noise levels must be positive")
        if self.drift_rate_max < 0:
            raise ValueError("drift_rate_max must be non-negative")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.c, dtype=float)


def nonlinearity_gain(x, x_nl):
    """Flat-topped x-detection sensitivity profile exp(-(x/x_nl)^4)."""
    return np.exp(-((np.asarray(x, dtype=float) / x_nl) ** 4))


def flat_region_scale(half_width: float, droop: float = 0.01) -> float:
    """x_nl such that the gain has dropped by ``droop`` at +-half_width."""
    return half_width / (-np.log1p(-droop)) ** 0.25


# ---------------------------------------------------------------------------
# drifts


@dataclass(frozen=True)
class ChannelDrift:
    """One drifting quantity.

    ``knots`` are (t, value) pairs interpolated linearly and held outside their
    span (ramp kind); ``replay`` is a tabulated trace that must cover every
    requested time.
    """

    offset: float = 0.0
    rate: float = 0.0
    knots: tuple = ()
    rw_rms: float = 0.0
    replay: tuple = ()


@dataclass(frozen=True)
class DriftModel:
    kind: str = "constant"
    delta0: ChannelDrift = field(default_factory=ChannelDrift)
    delta1: ChannelDrift = field(default_factory=ChannelDrift)
    chi_x: ChannelDrift = field(default_factory=ChannelDrift)
    timescale: float = 0.1
    rate_max: float = 1e-4
    stream: str = "drift"

    KINDS = ("constant", "ramp", "random_walk", "replay")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}; expected one of {self.KINDS}")
        if not self.timescale > 0:
            raise ValueError("timescale must be positive")
        if self.kind == "replay":
            for ch in (self.delta0, self.delta1, self.chi_x):
                if len(ch.replay) < 2:
                    raise ValueError("replay drift needs at least two samples per channel")
        if self.kind == "ramp" and self.chi_x.knots:
            kn = np.asarray(self.chi_x.knots, dtype=float)
            slopes = np.diff(kn[:, 1]) / np.diff(kn[:, 0])
            if np.any(np.abs(slopes) > self.rate_max * (1 + 1e-12)):
                raise ValueError("detection-offset knots exceed the drift rate bound")


class DriftProcess:
    """Evaluates a DriftModel; random walks are generated lazily on a fixed grid."""

    _CHUNK = 4096

    def __init__(self, model: DriftModel, seed=None):
        self.model = model
        self._paths = None
        if model.kind == "random_walk":
            ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
            self._h = model.timescale / 1000.0
            self._gens = [np.random.default_rng(s) for s in ss.spawn(3)]
            self._paths = [np.zeros(1), np.zeros(1), np.zeros(1)]

    def _extend(self, t_max):
        need = int(np.ceil(t_max / self._h)) + 2
        while self._paths[0].size < need:
            for i, (ch, g) in enumerate(zip(self._channels(), self._gens)):
                inc = g.standard_normal(self._CHUNK) * ch.rw_rms * np.sqrt(self._h / self.model.timescale)
                if i == 2:
                    lim = self.model.rate_max * self._h
                    inc = np.clip(inc, -lim, lim)
                self._paths[i] = np.concatenate([self._paths[i], self._paths[i][-1] + np.cumsum(inc)])

    def _channels(self):
        return (self.model.delta0, self.model.delta1, self.model.chi_x)

    def values(self, t):
        """Return (delta0, delta1, delta_chi_x) arrays at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0):
            raise ValueError("drift time must be non-negative")
        kind = self.model.kind
        out = []
        for i, ch in enumerate(self._channels()):
            rate = ch.rate
            if i == 2:
                rate = float(np.clip(rate, -self.model.rate_max, self.model.rate_max))
            if kind == "constant":
                val = np.full_like(t, ch.offset)
            elif kind == "ramp":
                val = ch.offset + rate * t
                if ch.knots:
                    kn = np.asarray(ch.knots, dtype=float)
                    val = val + np.interp(t, kn[:, 0], kn[:, 1])
            elif kind == "random_walk":
                self._extend(t.max() if t.size else 0.0)
                grid = np.arange(self._paths[i].size) * self._h
                val = ch.offset + rate * t + np.interp(t, grid, self._paths[i])
            else:
                rp = np.asarray(ch.replay, dtype=float)
                if t.size and (t.min() < rp[0, 0] or t.max() > rp[-1, 0]):
                    raise ValueError("replay drift requested outside the recorded span")
                val = np.interp(t, rp[:, 0], rp[:, 1])
            out.append(val)
        return out[0], out[1], out[2]


def drift_sample(model: DriftModel, t: float, rng=None):
    """(delta0, delta1, delta_chi_x) at time ``t``; ``rng`` seeds random walks."""
    d0, d1, dc = DriftProcess(model, rng).values(t)
    return float(d0[0]), float(d1[0]), float(dc[0])


# ---------------------------------------------------------------------------
# single-step API


@dataclass(frozen=True)
class ParticleState:
    q: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).copy())
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).copy())


def thermal_kick_std(pp: ParticleParams, dt: float) -> float:
    """Velocity increment std of the stochastic force over ``dt``."""
    return np.sqrt(2.0 * pp.gamma * K_B * pp.T0 * dt) / pp.m


def step(state: ParticleState, u: float, p: PotentialParams, pp: ParticleParams, dt: float, rng) -> ParticleState:
    """Advance the Langevin equation by ``dt`` with the electrode voltage held at ``u``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.v))):
        raise NumericalBlowUp("non-finite particle state")
    q = state.q.copy()
    v = state.v.copy()
    fu = np.asarray(pp.cf, dtype=float) * u
    kick = thermal_kick_std(pp, dt) * rng.standard_normal(3) if pp.T0 > 0 else np.zeros(3)
    K.substep(q, v, p.as_array(), p.delta0, p.delta1, 1.0 / pp.m, pp.gamma, fu, dt, kick, np.zeros((12, 3)))
    return ParticleState(q, v, state.t + dt)


def measure(state: ParticleState, det: DetectionConfig, drift_chi: float, rng, dt_sample: float):
    """Detector voltages (chi_x, chi_z) for one sample of length ``dt_sample``."""
    if not dt_sample > 0:
        raise ValueError("dt_sample must be positive")
    if rng is None:
        noise = np.zeros(2)
    else:
        noise = np.array([det.sigma_x, det.sigma_z]) / np.sqrt(dt_sample) * rng.standard_normal(2)
    out = np.zeros(2)
    K.detect(state.q, det.matrix, det.x_nl, drift_chi, noise, out)
    return float(out[0]), float(out[1])


# ---------------------------------------------------------------------------
# run records


@dataclass
class RunRecord:
    data: np.ndarray
    sample_rate: float
    seeds: dict
    scenario_hash: str
    status: str = "completed"
    faults: int = 0
    columns: tuple = COLUMN_NAMES

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def t(self):
        return self["t"]

    @property
    def lost(self) -> bool:
        return self.status == "particle lost"

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.data, dtype="<f8").tobytes())
        h.update(self.status.encode())
        return h.hexdigest()


def stream_seeds(base_seed: int) -> dict:
    """Independent SeedSequences for each named random stream."""
    return {name: np.random.SeedSequence(base_seed, spawn_key=(i,)) for i, name in enumerate(STREAMS)}


def apex_table(p: PotentialParams, d0, d1, step: float = 0.25e-9) -> np.ndarray:
    """True apex positions for offset samples, interpolated in the relative offset."""
    d0 = np.asarray(d0, dtype=float)
    rel = np.asarray(d1, dtype=float) - d0
    if rel.size == 0:
        return rel.copy()
    lo, hi = float(rel.min()), float(rel.max())
    if hi - lo < step:
        grid = np.array([lo]) if hi == lo else np.array([lo, hi])
    else:
        grid = np.linspace(lo, hi, int(np.ceil((hi - lo) / step)) + 1)
    vals = np.array([find_apex(p.with_offsets(0.0, g)).delta_apex for g in grid])
    if grid.size == 1:
        out = np.full(rel.shape, vals[0])
    else:
        out = np.interp(rel, grid, vals)
        # samples next to an invalid node stay invalid
        bad = np.isnan(vals)
        if bad.any():
            near = np.interp(rel, grid, bad.astype(float)) > 0
            out[near] = np.nan
    return d0 + out


def run_closed_loop(scenario, controller=None, block: int = 1 << 15) -> RunRecord:
    """Simulate the sampled feedback loop described by ``scenario``.

    Per controller sample the physics advances ``substeps`` RK4/Euler-Maruyama
    substeps with the held input, the detectors are sampled, and the controller
    consumes the measurement and returns the (delayed) command for the next
    interval.  ``controller=None`` is free evolution.  The controller object is
    reset before the run; pass a ``DiscreteLqg``.
    """
    sim = scenario.sim
    p = scenario.potential
    pp = scenario.particle
    det = scenario.detection
    T = 1.0 / sim.controller_rate
    nsub = int(sim.substeps)
    dt = T / nsub
    n_total = int(round(sim.duration * sim.controller_rate))
    decim = int(sim.decimation)
    seeds = stream_seeds(scenario.seed)
    gens = {name: np.random.default_rng(s) for name, s in seeds.items() if name != "drift"}
    drift = DriftProcess(scenario.drift, seeds["drift"])

    q = np.array(sim.q0, dtype=float)
    v = np.array(sim.v0, dtype=float)
    pot = p.as_array()
    kick_scale = np.full(3, thermal_kick_std(pp, dt))
    meas_scale = np.array([det.sigma_x, det.sigma_z]) / np.sqrt(T)
    cf = np.asarray(pp.cf, dtype=float)

    if controller is not None:
        controller.reset()
        c = controller
        args = (
            True, c.Ad, c.Bd, c.L, c.C, c.kaug, c.apex_idx, c.apex_max, c.xhat, c.buf, c.head,
            c.u_applied, c.ysel, c.predict,
        )
        est_map = c.est_map
    else:
        dummy = np.zeros((1, 1))
        args = (
            False, dummy, np.zeros(1), dummy, dummy, np.zeros(1), -1, 0.0, np.zeros(1), np.zeros(0),
            np.zeros(1, dtype=np.int64), np.zeros(1), np.zeros(1, dtype=np.int64), False,
        )
        est_map = np.full(5, -1, dtype=np.int64)
    u_bias = float(getattr(sim, "u_bias", 0.0))
    tones = [(float(a), float(f)) for a, f in getattr(sim, "drive_tones", ())]

    n_rec = n_total // decim
    rec = np.full((n_rec, len(COLUMN_NAMES)), np.nan)
    counter = np.zeros(1, dtype=np.int64)
    faults = np.zeros(1, dtype=np.int64)
    rows = 0
    status = K.STATUS_OK
    done = 0
    while done < n_total:
        nb = min(block, n_total - done)
        t_s = (done + np.arange(nb)) * T
        d0a, d1a, dca = drift.values(t_s)
        thermal = np.empty((nb, nsub, 3))
        for i, ax in enumerate("xyz"):
            thermal[:, :, i] = gens[f"thermal-{ax}"].standard_normal((nb, nsub))
        meas = np.empty((nb, 2))
        meas[:, 0] = meas_scale[0] * gens["measurement-x"].standard_normal(nb)
        meas[:, 1] = meas_scale[1] * gens["measurement-z"].standard_normal(nb)
        # open-loop input held over the interval that starts at each sample
        uext = np.full(nb, u_bias)
        for amp, f in tones:
            uext += amp * np.sin(2.0 * np.pi * f * t_s)
        k_done, r, status = K.run_block(
            q, v, pot, d0a, d1a, dca, 1.0 / pp.m, pp.gamma, cf, dt, nsub, thermal, kick_scale, meas,
            det.matrix, det.x_nl, *args, uext, decim, counter, rec, rows, sim.escape_radius, faults, est_map,
        )
        rows += r
        done += k_done
        if status != K.STATUS_OK:
            break

    rec = rec[:rows]
    if rows:
        rec[:, COL["apex_true"]] = apex_table(p, rec[:, COL["delta0"]], rec[:, COL["delta1"]])
    if controller is not None:
        controller.faults += int(faults[0])
    return RunRecord(
        data=rec,
        sample_rate=sim.controller_rate / decim,
        seeds={"base": int(scenario.seed)},
        scenario_hash=scenario.hash(),
        status="completed" if status == K.STATUS_OK else "particle lost",
        faults=int(faults[0]),
    )
