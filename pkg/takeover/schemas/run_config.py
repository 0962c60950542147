# takeover/schemas/run_config.py
"""
Run configuration: pydantic models per namespace, fed from a flat dotenv
style file (`platoon.v_e=26.2`), repeated `--set key=value` flags and the
dedicated CLI flags. Precedence: flag > --set > file > default.
"""
from __future__ import annotations

import hashlib
import json
from takeover._compat import StrEnum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from takeover.errors import ConfigError, InputError


class Workflow(StrEnum):
    SIMULATE = "simulate"
    CALIBRATE = "calibrate"
    TRAIN = "train"
    EVALUATE = "evaluate"
    REPORT = "report"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PathsSection(_Section):
    leader_profile: Optional[str] = None  # packaged profile when unset
    hdv_posterior: Optional[str] = None
    av_posterior: Optional[str] = None
    ea_posterior: Optional[str] = None
    observed_bundle: Optional[str] = None
    checkpoint: Optional[str] = None
    source: Optional[str] = None  # report: directory to summarize
    output: str = "out"


class PlatoonSection(_Section):
    v_e: float = Field(26.2, gt=0)
    n_followers: int = Field(1, ge=1)
    horizon: Optional[float] = Field(None, gt=0)
    vehicle_length: float = Field(5.0, gt=0)
    force_takeover_at: Optional[float] = Field(None, ge=0)
    suppress_takeover: bool = False


class EaSection(_Section):
    sigma: float = Field(1.0, ge=0)
    alpha: float = Field(0.1, ge=0)
    phi_x_min: float = 0.0
    phi_x_max: float = 20.0
    phi_v_min: float = 0.0
    phi_v_max: float = 5.0
    phi_tta_min: float = 0.0
    phi_tta_max: float = 30.0
    D_T: float = Field(1350.0, gt=0)
    TTT_A: float = Field(68.0, ge=0)

    @model_validator(mode="after")
    def _ordered_scales(self) -> "EaSection":
        for ch in ("x", "v", "tta"):
            if getattr(self, f"phi_{ch}_max") <= getattr(self, f"phi_{ch}_min"):
                raise ValueError(f"phi_{ch}_max must exceed phi_{ch}_min")
        return self


class CfSection(_Section):
    shares: Tuple[float, float, float, float] = (0.1, 0.1, 0.7, 0.1)
    av: str = "hl"  # hl | idm-pid | av-posterior
    idm_pid_preset: str = "conservative"
    a_min: float = Field(-8.0, lt=0)
    a_max: float = Field(4.0, gt=0)

    @field_validator("shares", mode="before")
    @classmethod
    def _split_shares(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(float(x) for x in value.split(","))
        return value

    @field_validator("shares")
    @classmethod
    def _probability_vector(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(s < 0 for s in value) or abs(sum(value) - 1.0) > 1e-9:
            raise ValueError("shares must be non-negative and sum to 1")
        return value

    @field_validator("av")
    @classmethod
    def _known_av(cls, value: str) -> str:
        value = value.strip().lower()
        if value not in ("hl", "idm-pid", "av-posterior"):
            raise ValueError("must be one of hl, idm-pid, av-posterior")
        return value


class RewardSection(_Section):
    wR1: float = Field(1.0, ge=0)
    wR2: float = Field(0.5, ge=0)
    wR3: float = Field(0.5, ge=0)
    rho1: float = Field(1.5, ge=0)
    rho2: float = Field(1.0, ge=0)
    rho3: float = Field(5.0, ge=0)
    rho4: float = Field(5.0, ge=0)
    window: int = Field(50, ge=1)
    eps_n: float = Field(1e-3, gt=0)
    ratio_cap: float = Field(100.0, gt=0)


class SacSection(_Section):
    actor_lr: float = Field(1e-5, gt=0)
    critic_lr: float = Field(1e-5, gt=0)
    temperature_lr: float = Field(3e-4, gt=0)
    discount: float = Field(0.90, ge=0, le=1)
    hidden_size: int = Field(256, ge=1)
    hidden_layers: int = Field(2, ge=1)
    reward_scale: float = Field(0.75, gt=0)
    update_cycles: int = Field(25, ge=1)
    update_interval: int = Field(10, ge=1)
    batch_size: int = Field(8196, ge=1)
    log_std_min: float = -20.0
    log_std_max: float = 2.5
    replay_capacity: int = Field(1_000_000, ge=1)
    tau: float = Field(5e-3, gt=0, le=1)
    warmup_steps: int = Field(1000, ge=0)
    episodes: int = Field(2000, ge=1)
    checkpoint_every: int = Field(100, ge=1)
    train_fraction: float = Field(0.8, gt=0, lt=1)
    smoke: bool = False  # simplified deterministic environment


class AbcSection(_Section):
    particles: int = Field(1000, ge=1)
    generations: int = Field(8, ge=1)
    replicates: int = Field(5, ge=1)
    quantile: float = Field(0.5, gt=0, lt=1)
    min_acceptance: float = Field(0.01, gt=0, le=1)
    pooled: bool = False
    synthetic: int = Field(0, ge=0)  # >0: synthesize this many instances instead of loading a bundle
    synthetic_theta: Tuple[float, float, float, float, float, float] = (2.0, 0.8, 40.0, 0.3, 0.3, 0.4)
    synthetic_horizon: float = Field(120.0, gt=0)

    @field_validator("synthetic_theta", mode="before")
    @classmethod
    def _split_theta(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(float(x) for x in value.split(","))
        return value


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    workflow: Workflow
    seed: int = Field(..., ge=0)
    runs: int = Field(1, ge=1)
    threads: int = Field(1, ge=1)
    controllers: Tuple[str, ...] = ("idm-pid", "hl")
    paths: PathsSection = PathsSection()
    platoon: PlatoonSection = PlatoonSection()
    ea: EaSection = EaSection()
    cf: CfSection = CfSection()
    reward: RewardSection = RewardSection()
    sac: SacSection = SacSection()
    abc: AbcSection = AbcSection()

    @field_validator("controllers", mode="before")
    @classmethod
    def _split_controllers(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(v.strip().lower() for v in value.split(",") if v.strip())
        return value

    @field_validator("controllers")
    @classmethod
    def _known_controllers(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        unknown = [c for c in value if c not in ("policy", "idm-pid", "hl")]
        if unknown or not value:
            raise ValueError(f"controllers must be a nonempty subset of policy, idm-pid, hl; got {list(value)}")
        return value

    @property
    def output_dir(self) -> Path:
        return Path(self.paths.output)

    def snapshot(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def run_id(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def check_paths(self) -> None:
        """Referenced input paths must exist for this workflow."""
        required: List[Tuple[str, Optional[str]]] = [
            ("paths.leader_profile", self.paths.leader_profile),
            ("paths.hdv_posterior", self.paths.hdv_posterior),
            ("paths.av_posterior", self.paths.av_posterior),
            ("paths.ea_posterior", self.paths.ea_posterior),
        ]
        if self.workflow == Workflow.CALIBRATE and self.abc.synthetic == 0:
            if not self.paths.observed_bundle:
                raise ConfigError(
                    "calibrate needs paths.observed_bundle or abc.synthetic > 0", key_path="paths.observed_bundle"
                )
            required.append(("paths.observed_bundle", self.paths.observed_bundle))
        if self.workflow == Workflow.EVALUATE and "policy" in self.controllers:
            if not self.paths.checkpoint:
                raise ConfigError("evaluating 'policy' needs paths.checkpoint", key_path="paths.checkpoint")
        if self.workflow == Workflow.REPORT:
            required.append(("paths.source", self.paths.source or self.paths.output))
        for key, value in required:
            if value and not Path(value).exists():
                raise InputError(f"{key}: path does not exist: {value}", path=value, key_path=key)


def _nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for key, value in flat.items():
        if value is None:
            continue
        parts = key.strip().split(".")
        node = tree
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"'{key}' nests under a scalar key", key_path=key)
            node = child
        node[parts[-1]] = value
    return tree


def parse_assignments(items: Sequence[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"expected key=value, got '{item}'", key_path=item)
        out[key.strip()] = value.strip()
    return out


def read_config_file(path: Path | str) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}", path=str(path))
    return {k: v for k, v in dotenv_values(path).items() if v is not None}


def load_run_config(
    workflow: Workflow | str,
    config_file: Optional[Path | str] = None,
    sets: Sequence[str] = (),
    flags: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    flat: Dict[str, Any] = {}
    if config_file:
        flat.update(read_config_file(config_file))
    flat.update(parse_assignments(sets))
    flat.update({k: v for k, v in (flags or {}).items() if v is not None})
    flat["workflow"] = str(Workflow(workflow))
    try:
        return RunConfig.model_validate(_nest(flat))
    except ValidationError as exc:
        err = exc.errors()[0]
        key_path = ".".join(str(p) for p in err["loc"])
        raise ConfigError(f"{key_path}: {err['msg']}", key_path=key_path, errors=len(exc.errors()))
