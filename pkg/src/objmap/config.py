"""Parameter configuration: key = value files with pinned defaults.

Unknown keys are rejected; missing keys fall back to the defaults below,
which mirror the experimentally chosen operating point. ``sigma_c`` defaults
to ``eps_lim / 3`` when not given explicitly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .alignment import AlignmentParams
from .reconstruct import ReconstructionParams
from .tracking import TrackerParams

__all__ = ["PipelineConfig", "load_config", "dump_config", "ConfigError"]


class ConfigError(ValueError):
    pass


_INT_KEYS = {"t_lim", "n_lim", "WL", "SL", "s_lim"}


@dataclass(frozen=True)
class PipelineConfig:
    T_p: float = 2.0  # keyframe spacing gate, m
    a_lim: float = 10.0  # epipolar margin, px
    v_lim: float = 4.0  # VIO shift gate
    q_lim: float = 0.2  # assignment score floor
    h_lim: float = 0.2  # tracking size gate
    t_lim: int = 3  # staleness window, keyframes
    n_lim: int = 5  # min track length
    sigma_px: float = 3.0  # centroid noise, px
    WL: int = 50  # window length, objects
    SL: int = 10  # stride, objects
    eps_lim: float = 2.0  # distance-consistency gate, m
    r_lim: float = 0.2  # alignment size gate
    alpha_lim: float = 22.5  # roll/pitch gate, deg
    s_lim: int = 5  # acceptance threshold, associations
    sigma_c: float = 2.0 / 3.0  # consistency kernel width, m
    ratio_test: float = 0.75

    def tracker_params(self) -> TrackerParams:
        return TrackerParams(
            a_lim=self.a_lim,
            v_lim=self.v_lim,
            q_lim=self.q_lim,
            h_lim=self.h_lim,
            t_lim=self.t_lim,
            ratio_test=self.ratio_test,
        )

    def reconstruction_params(self) -> ReconstructionParams:
        return ReconstructionParams(n_lim=self.n_lim, sigma_px=self.sigma_px)

    def alignment_params(self) -> AlignmentParams:
        return AlignmentParams(
            WL=self.WL,
            SL=self.SL,
            eps_lim=self.eps_lim,
            r_lim=self.r_lim,
            alpha_lim=self.alpha_lim,
            s_lim=self.s_lim,
            sigma_c=self.sigma_c,
        )

    def params_hash(self) -> str:
        h = hashlib.sha256()
        for f in fields(self):
            h.update(f"{f.name}={getattr(self, f.name)!r};".encode())
        return h.hexdigest()[:16]


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Load a config file (optional) and apply overrides; validate keys."""
    known = {f.name for f in fields(PipelineConfig)}
    values: dict = {}
    if path is not None:
        for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise ConfigError(f"line {line_no}: unknown parameter {key!r}")
            try:
                values[key] = int(val) if key in _INT_KEYS else float(val)
            except ValueError:
                raise ConfigError(f"line {line_no}: bad value for {key}: {val!r}") from None
    if overrides:
        for key, val in overrides.items():
            if val is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown parameter {key!r}")
            values[key] = int(val) if key in _INT_KEYS else float(val)
    if "sigma_c" not in values:
        eps = values.get("eps_lim", PipelineConfig.eps_lim)
        values["sigma_c"] = eps / 3.0
    try:
        return PipelineConfig(**values)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def dump_config(cfg: PipelineConfig, path=None) -> str:
    """Serialize every parameter; reloading the dump reproduces cfg exactly."""
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {v if f.name in _INT_KEYS else repr(float(v))}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
