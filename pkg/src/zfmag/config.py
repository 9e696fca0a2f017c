"""Run configuration read from TOML.

Every physical key carries its unit as a suffix (``standoff_m``,
``b_start_T``). Unknown sections or keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import tomli

from .lineshape import TransverseResponse, ZeroFieldFeature
from .magnetostatics import CrossPattern, GridSpec, Route
from .synth import CameraModel, ClusterSpec, ScanProtocol


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    nx: int = 612
    ny: int = 512
    pitch_m: float = 0.15e-6
    standoff_m: float = 0.11e-3
    route: str = "P34"
    current_A: float = 0.5
    arm_length_m: float = 5e-3
    wire_width_m: float = 65e-6
    n_filaments: int = 9
    # ~3.8e5 photons per pixel per 10 ms frame: single-pixel centre stderr ~0.05 mT
    photon_rate_per_s: float = 3.8e7
    cluster_sigma: float = 0.3
    cluster_length_m: float = 2e-6
    contrast_pct: float = 1.0
    fwhm_T: float = 2.0e-3
    k_w: float = 0.8
    k_C_per_T: float = 500.0
    b_knee_T: float = 0.0

    def grid(self) -> GridSpec:
        return GridSpec.centered(self.nx, self.ny, self.pitch_m, self.standoff_m)

    def pattern(self) -> CrossPattern:
        return CrossPattern(self.arm_length_m, self.wire_width_m, self.n_filaments)

    def feature(self) -> ZeroFieldFeature:
        return ZeroFieldFeature.from_contrast(self.contrast_pct / 100, self.fwhm_T)

    def response(self) -> TransverseResponse:
        return TransverseResponse(self.k_w, self.k_C_per_T, self.b_knee_T)

    def cluster(self) -> ClusterSpec:
        return ClusterSpec(self.cluster_sigma, self.cluster_length_m)


@dataclass
class ProtocolConfig:
    b_start_T: float = -4e-3
    b_stop_T: float = 4e-3
    n_steps: int = 81
    exposure_s: float = 0.01

    def protocol(self) -> ScanProtocol:
        return ScanProtocol(self.b_start_T, self.b_stop_T, self.n_steps, self.exposure_s)


@dataclass
class CameraConfig:
    gain_photons_per_count: float = 380.0
    read_noise_counts: float = 0.0
    bit_depth: int = 12

    def camera(self) -> CameraModel:
        return CameraModel(self.gain_photons_per_count, self.read_noise_counts, self.bit_depth)


@dataclass
class FitConfig:
    bin_factor: int = 16
    weighting: str = "none"
    max_iter: int = 200
    min_contrast_pct: float = 0.2
    max_fwhm_T: float = 6e-3
    max_center_err_T: float = 0.5e-3


@dataclass
class AnalysisConfig:
    p_f: float = 0.70
    #: profile row on the superpixel grid; -1 selects the middle row
    row: int = -1
    max_rmse_T: float = 1.5e-5
    min_pearson_r: float = 0.98
    currents_A: list = field(default_factory=list)


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "zfmag-out"
    scene: SceneConfig = field(default_factory=SceneConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    SECTIONS = ("scene", "protocol", "camera", "fit", "analysis")

    def validate(self) -> "RunConfig":
        """Build every derived object once so bad values fail early."""
        try:
            Route(self.scene.route)
            self.scene.grid()
            self.scene.pattern()
            self.scene.feature()
            self.scene.response()
            self.protocol.protocol()
            self.camera.camera()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.fit.bin_factor < 1:
            raise ConfigError("fit.bin_factor must be >= 1")
        if self.fit.weighting not in ("none", "poisson"):
            raise ConfigError("fit.weighting must be 'none' or 'poisson'")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(section_cls, data: dict, where: str):
    fields = {f.name: f for f in dataclasses.fields(section_cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        default = getattr(section_cls(), key)
        if isinstance(default, bool) or not isinstance(default, (int, float, str, list)):
            kwargs[key] = value
        elif isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
            kwargs[key] = float(value)
        elif type(value) is not type(default):
            raise ConfigError(f"[{where}] {key}: expected {type(default).__name__}, "
                              f"got {type(value).__name__}")
        else:
            kwargs[key] = value
    return section_cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    sections = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - set(sections))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    classes = {"scene": SceneConfig, "protocol": ProtocolConfig, "camera": CameraConfig,
               "fit": FitConfig, "analysis": AnalysisConfig}
    kwargs = {}
    for key, value in data.items():
        if key in classes:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            kwargs[key] = _coerce(classes[key], value, key)
        elif key == "seed":
            if not isinstance(value, int):
                raise ConfigError("seed must be an integer")
            kwargs[key] = value
        else:
            kwargs[key] = str(value)
    return RunConfig(**kwargs).validate()


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)
