"""Scenario files: dataclass configuration, JSON (de)serialization and bundled presets.

A scenario is a single JSON document whose field names carry their units.
Missing sections or fields take the defaults of the dataclasses below, so a
file only needs to list what differs from the calibrated reference setup.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import constants as c
from .control import CalibratedModel, ControllerVariant, LqgWeights, synthesize
from .dynamics import ChannelDrift, DetectionConfig, DriftModel, ParticleParams, flat_region_scale
from .potential import PotentialParams, calibrate_potential, find_apex, potential_energy, well_characteristics

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Invalid scenario content; carries a JSON-path style location."""


# ---------------------------------------------------------------------------
# sections


@dataclass(frozen=True)
class PotentialConfig:
    f_apex_hz: float = c.F_APEX_HZ
    f_well_hz: float = c.F_WELL_HZ
    f_y_hz: float = c.F_Y_HZ
    f_z_hz: float = c.F_Z_HZ
    waist_m: float | None = None
    k_drop_fraction: float = 0.08
    k_drop_offset_m: float = 30e-9
    p00_mW: float = 80.0
    p01_mW: float = 135.0
    delta0_m: float = 0.0
    delta1_m: float = 0.0
    tem01_on: bool = True

    def build(self, mass: float) -> PotentialParams:
        p = calibrate_potential(
            mass, self.f_apex_hz, self.f_well_hz, self.f_y_hz, self.f_z_hz, w0=self.waist_m,
            k_drop=self.k_drop_fraction, k_drop_offset=self.k_drop_offset_m,
            P00=self.p00_mW * 1e-3, P01=self.p01_mW * 1e-3,
        )
        p = p.with_offsets(self.delta0_m, self.delta1_m)
        return p if self.tem01_on else p.with_tem01_off()


@dataclass(frozen=True)
class ParticleConfig:
    diameter_m: float = c.PARTICLE_DIAMETER
    density_kg_per_m3: float = c.SILICA_DENSITY
    damping_hz: float = c.GAMMA_HZ
    temperature_K: float = c.T_ROOM
    cf_N_per_V: tuple = (c.CF_X, 0.0, c.CF_Z)

    @property
    def mass_kg(self) -> float:
        return c.sphere_mass(self.diameter_m, self.density_kg_per_m3)

    def build(self) -> ParticleParams:
        return ParticleParams.from_rate(self.mass_kg, c.TWO_PI * self.damping_hz, self.temperature_K, self.cf_N_per_V)


@dataclass(frozen=True)
class DetectionSection:
    c_V_per_m: tuple = ((c.C_XX, 0.0, c.C_CROSS), (0.0, 0.0, c.C_ZZ))
    x_nl_m: float | None = None
    flat_half_width_m: float = 200e-9
    sigma_x_V_per_rtHz: float = 3e-6
    sigma_z_V_per_rtHz: float = 3e-6
    drift_rate_max_V_per_s: float = c.DETECTION_DRIFT_RATE_V_S

    def build(self) -> DetectionConfig:
        x_nl = self.x_nl_m if self.x_nl_m is not None else flat_region_scale(self.flat_half_width_m)
        return DetectionConfig(
            c=tuple(tuple(r) for r in self.c_V_per_m), x_nl=x_nl, sigma_x=self.sigma_x_V_per_rtHz,
            sigma_z=self.sigma_z_V_per_rtHz, drift_rate_max=self.drift_rate_max_V_per_s,
        )


@dataclass(frozen=True)
class ChannelSection:
    offset: float = 0.0
    rate_per_s: float = 0.0
    knots: tuple = ()
    rw_rms: float = 0.0
    replay: tuple = ()

    def build(self) -> ChannelDrift:
        return ChannelDrift(self.offset, self.rate_per_s, self.knots, self.rw_rms, self.replay)


@dataclass(frozen=True)
class DriftSection:
    kind: str = "constant"
    timescale_s: float = 0.1
    delta0_m: ChannelSection = field(default_factory=ChannelSection)
    delta1_m: ChannelSection = field(default_factory=ChannelSection)
    delta_chi_x_V: ChannelSection = field(default_factory=ChannelSection)

    def build(self, rate_max: float) -> DriftModel:
        return DriftModel(
            kind=self.kind, delta0=self.delta0_m.build(), delta1=self.delta1_m.build(),
            chi_x=self.delta_chi_x_V.build(), timescale=self.timescale_s, rate_max=rate_max,
        )


@dataclass(frozen=True)
class ControllerConfig:
    enabled: bool = True
    variant: str = ControllerVariant.ADAPTIVE_2D.value
    r_lqr: float = 3e9
    q_z: float = 1.0
    sigma_w_apex: float = 3e-8
    apex_max_V: float = c.APEX_MAX_V
    delay_s: float = c.LOOP_DELAY_S
    predict: bool = False

    def delay_samples(self, rate: float) -> int:
        return int(math.ceil(self.delay_s * rate - 1e-9))


@dataclass(frozen=True)
class SimulationConfig:
    duration_s: float = 0.02
    controller_rate_hz: float = c.CONTROLLER_RATE_HZ
    substeps: int = 4
    decimation: int = 16
    q0_m: tuple = (0.0, 0.0, 0.0)
    v0_m_per_s: tuple = (0.0, 0.0, 0.0)
    escape_radius_m: float = 2e-6
    u_bias_V: float = 0.0
    drive_tones: tuple = ()  # ((amplitude_V, frequency_hz), ...)

    # names used by the simulation loop
    @property
    def controller_rate(self):
        return self.controller_rate_hz

    @property
    def duration(self):
        return self.duration_s

    @property
    def q0(self):
        return self.q0_m

    @property
    def v0(self):
        return self.v0_m_per_s

    @property
    def escape_radius(self):
        return self.escape_radius_m

    @property
    def u_bias(self):
        return self.u_bias_V


@dataclass(frozen=True)
class AnalysisConfig:
    t_avg_s: float = c.T_AVG_S
    hist_bins: int = 64
    well_band_fraction: float = 0.1
    well_peak_factor: float = 3.0
    welch_segment_s: float = 1e-3


@dataclass(frozen=True)
class OutputConfig:
    format: str = "csv"
    plots: bool = False


_SECTIONS = {
    "potential": PotentialConfig,
    "particle": ParticleConfig,
    "detection": DetectionSection,
    "drift": DriftSection,
    "controller": ControllerConfig,
    "simulation": SimulationConfig,
    "analysis": AnalysisConfig,
    "output": OutputConfig,
}


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class Scenario:
    name: str = "default"
    seed: int = 1
    potential_cfg: PotentialConfig = field(default_factory=PotentialConfig)
    particle_cfg: ParticleConfig = field(default_factory=ParticleConfig)
    detection_cfg: DetectionSection = field(default_factory=DetectionSection)
    drift_cfg: DriftSection = field(default_factory=DriftSection)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    sim: SimulationConfig = field(default_factory=SimulationConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        self._validate()

    # resolved physical objects
    @cached_property
    def particle(self) -> ParticleParams:
        return self.particle_cfg.build()

    @cached_property
    def potential(self) -> PotentialParams:
        return self.potential_cfg.build(self.particle.m)

    @cached_property
    def detection(self) -> DetectionConfig:
        return self.detection_cfg.build()

    @cached_property
    def drift(self) -> DriftModel:
        return self.drift_cfg.build(self.detection.drift_rate_max)

    def _validate(self):
        s = self.sim
        if s.duration_s < 0:
            raise ScenarioError("simulation.duration_s: must be non-negative")
        if s.substeps < 1 or s.decimation < 1:
            raise ScenarioError("simulation: substeps and decimation must be >= 1")
        if self.drift_cfg.kind not in DriftModel.KINDS:
            raise ScenarioError(f"drift.kind: unknown kind {self.drift_cfg.kind!r}")
        try:
            ControllerVariant(self.controller.variant)
        except ValueError:
            raise ScenarioError(f"controller.variant: unknown variant {self.controller.variant!r}") from None
        try:
            self.particle, self.potential, self.detection, self.drift
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc
        f_max = self.max_mechanical_frequency()
        dt = 1.0 / (s.controller_rate_hz * s.substeps)
        if dt > 1.0 / (20.0 * f_max):
            raise ScenarioError(
                f"simulation.substeps: physics step {dt:.3g} s exceeds 1/(20 f_max) with f_max = {f_max:.4g} Hz"
            )

    def max_mechanical_frequency(self) -> float:
        """Highest small-oscillation frequency (Hz) at the apex and in the wells."""
        p = self.potential
        m = self.particle.m
        apex = find_apex(p)
        x0 = apex.delta_apex if apex.valid else 0.0
        h = 1e-9
        f = []
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            q0 = np.array([x0, 0.0, 0.0])
            k = (potential_energy(q0 + e, p) - 2 * potential_energy(q0, p) + potential_energy(q0 - e, p)) / h**2
            f.append(math.sqrt(abs(k) / m) / c.TWO_PI)
        if apex.valid:
            try:
                f.append(well_characteristics(p, m).omega_well / c.TWO_PI)
            except ValueError:
                pass
        return max(f)

    # controller
    def calibrated_model(self) -> CalibratedModel:
        """Linear model the controller is designed from (aligned potential)."""
        p = self.potential.with_offsets(0.0, 0.0)
        pp = self.particle
        apex = find_apex(p)
        if not apex.valid:
            raise ScenarioError("potential: no apex in the aligned configuration")
        h = 1e-9
        q0 = np.array([apex.delta_apex, 0.0, 0.0])
        e = np.array([0.0, 0.0, h])
        kz = (potential_energy(q0 + e, p) - 2 * potential_energy(q0, p) + potential_energy(q0 - e, p)) / h**2
        C = self.detection.matrix
        return CalibratedModel(
            m=pp.m, Gamma=pp.Gamma, k_over_m=apex.k_apex / pp.m, omega_z=math.sqrt(kz / pp.m),
            cfx=pp.cf[0], cfz=pp.cf[2], c_xx=C[0, 0], c_xz=C[0, 2], c_zx=C[1, 0], c_zz=C[1, 2],
            T0=pp.T0, sigma_x=self.detection.sigma_x, sigma_z=self.detection.sigma_z,
            sigma_w_apex=self.controller.sigma_w_apex,
        )

    def apex_max_m(self) -> float:
        return self.controller.apex_max_V / abs(self.detection.matrix[0, 0])

    def design(self, variant: str | None = None):
        """Synthesize the configured (or given) controller variant."""
        cc = self.controller
        v = ControllerVariant(variant or cc.variant)
        return synthesize(
            self.calibrated_model(), v, LqgWeights(r=cc.r_lqr, qz=cc.q_z), 1.0 / self.sim.controller_rate_hz,
            cc.delay_samples(self.sim.controller_rate_hz), self.apex_max_m(), predict=cc.predict,
        )

    # serialization
    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "name": self.name, "seed": self.seed}
        for key, obj in self._section_items():
            out[key] = _plain(asdict(obj))
        return out

    def _section_items(self):
        return (
            ("potential", self.potential_cfg),
            ("particle", self.particle_cfg),
            ("detection", self.detection_cfg),
            ("drift", self.drift_cfg),
            ("controller", self.controller),
            ("simulation", self.sim),
            ("analysis", self.analysis),
            ("output", self.output),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("output")
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))

    def with_variant(self, variant: str) -> "Scenario":
        return replace(self, controller=replace(self.controller, variant=ControllerVariant(variant).value))

    def updated(self, **sections) -> "Scenario":
        """Copy with whole sections or top-level fields replaced."""
        rename = {"potential": "potential_cfg", "particle": "particle_cfg", "detection": "detection_cfg",
                  "drift": "drift_cfg", "simulation": "sim"}
        return replace(self, **{rename.get(k, k): v for k, v in sections.items()})


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _tupled(v):
    if isinstance(v, list):
        return tuple(_tupled(x) for x in v)
    return v


def _section(cls, data: dict, where: str):
    kwargs = {}
    names = {f.name: f for f in fields(cls)}
    for k, v in data.items():
        if k not in names:
            raise ScenarioError(f"{where}.{k}: unknown field")
        if cls is DriftSection and k in ("delta0_m", "delta1_m", "delta_chi_x_V"):
            v = _section(ChannelSection, v, f"{where}.{k}")
        else:
            v = _tupled(v)
        kwargs[k] = v
    return cls(**kwargs)


def schema() -> dict:
    with resources.files("apexlqg").joinpath("scenarios/scenario.schema.json").open() as fh:
        return json.load(fh)


def from_dict(data: dict) -> Scenario:
    try:
        jsonschema.validate(data, schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{loc}: {exc.message}") from None
    kw = {"name": data.get("name", "unnamed"), "seed": int(data.get("seed", 1))}
    rename = {"potential": "potential_cfg", "particle": "particle_cfg", "detection": "detection_cfg",
              "drift": "drift_cfg", "simulation": "sim"}
    for key, cls in _SECTIONS.items():
        if key in data:
            kw[rename.get(key, key)] = _section(cls, data[key], key)
    try:
        return Scenario(**kw)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc


def loads(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ScenarioError("<root>: scenario must be a JSON object")
    return from_dict(data)


def bundled_names() -> list[str]:
    root = resources.files("apexlqg").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json") and "schema" not in p.name)


def load_scenario(name_or_path) -> Scenario:
    """Load a scenario file, or a bundled preset by name."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return loads(path.read_text())
    name = str(name_or_path)
    if name in bundled_names():
        text = resources.files("apexlqg").joinpath(f"scenarios/{name}.json").read_text()
        return loads(text)
    if path.suffix == ".json":
        raise ScenarioError(f"{path}: file not found")
    raise ScenarioError(f"unknown scenario {name!r}; bundled: {', '.join(bundled_names())}")


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(sc.to_json())


def deep_update(base: dict, patch: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_update(out[k], v)
        else:
            out[k] = v
    return out
