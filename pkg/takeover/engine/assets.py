# takeover/engine/assets.py
"""Everything a workflow step needs besides the pipeline state: resolved inputs and the report environment."""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Any, List, Optional, Tuple

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from takeover.core.kinematics import Trajectory
from takeover.core.settings import Settings, get_settings
from takeover.domain.cf_models import CfSpec, default_hl_spec, idm_pid_preset
from takeover.domain.particles import Posterior, load_ea_posterior
from takeover.domain.posteriors import AvPosterior, HdvPosterior, load_av_posterior, load_hdv_posterior
from takeover.errors import InputError
from takeover.rl.env import RewardParams, Scenario, smoke_scenario
from takeover.rl.sac import SacHyper
from takeover.schemas.run_config import RunConfig
from takeover.services.intervention import EaParams
from takeover.services.platoon import load_leader_profile


def fmt_num(value: Any, digits: int = 3) -> str:
    try:
        return f"{float(value):,.{digits}f}"
    except (TypeError, ValueError):
        return "-"


def fmt_pct(value: Any) -> str:
    try:
        return f"{100.0 * float(value):.1f}%"
    except (TypeError, ValueError):
        return "-"


@dataclass
class RunAssets:
    run: RunConfig
    settings: Settings
    template_path: Optional[str] = None

    # --- inputs --------------------------------------------------------------

    def _data_path(self, configured: Optional[str], default_name: str) -> Path:
        path = Path(configured) if configured else self.settings.data_dir / default_name
        if not path.exists():
            raise InputError(f"input not found: {path}", path=str(path))
        return path

    @cached_property
    def leaders(self) -> Tuple[Trajectory, ...]:
        """One profile, or every *.csv in a directory (sorted by name)."""
        path = self._data_path(self.run.paths.leader_profile, "leader_profile.csv")
        files: List[Path] = sorted(path.glob("*.csv")) if path.is_dir() else [path]
        if not files:
            raise InputError(f"no leader profiles in {path}", path=str(path))
        return tuple(load_leader_profile(f) for f in files)

    @cached_property
    def hdv_posterior(self) -> HdvPosterior:
        return load_hdv_posterior(
            self._data_path(self.run.paths.hdv_posterior, "hdv_posterior.csv"), self.run.cf.shares
        )

    @cached_property
    def av_posterior(self) -> AvPosterior:
        return load_av_posterior(self._data_path(self.run.paths.av_posterior, "av_posterior.csv"))

    @cached_property
    def ea_posterior(self) -> Posterior:
        return load_ea_posterior(self._data_path(self.run.paths.ea_posterior, "ea_posterior.csv"))

    @cached_property
    def ea_template(self) -> EaParams:
        ea = self.run.ea
        return EaParams(
            E0=0.0, d=0.0, E_T=float("inf"), w1=1 / 3, w2=1 / 3, w3=1 - 2 / 3,
            sigma=ea.sigma, alpha=ea.alpha,
            phi_x=(ea.phi_x_min, ea.phi_x_max),
            phi_v=(ea.phi_v_min, ea.phi_v_max),
            phi_tta=(ea.phi_tta_min, ea.phi_tta_max),
            D_T=ea.D_T, TTT_A=ea.TTT_A,
        )

    @cached_property
    def reward_params(self) -> RewardParams:
        return RewardParams(v_e=self.run.platoon.v_e, **self.run.reward.model_dump())

    @cached_property
    def sac_hyper(self) -> SacHyper:
        fields = set(SacHyper.__dataclass_fields__)
        return SacHyper(**{k: v for k, v in self.run.sac.model_dump().items() if k in fields})

    def baseline(self, name: str) -> Any:
        """AV controller for a baseline name: hl | idm-pid | av-posterior."""
        cf = self.run.cf
        if name == "hl":
            return replace(default_hl_spec(), a_min=cf.a_min, a_max=cf.a_max)
        if name == "idm-pid":
            return replace(idm_pid_preset(cf.idm_pid_preset), a_min=cf.a_min, a_max=cf.a_max)
        if name == "av-posterior":
            return self.av_posterior
        raise InputError(f"unknown AV controller '{name}'", key_path="cf.av")

    @property
    def av_controller(self) -> CfSpec | AvPosterior:
        return self.baseline(self.run.cf.av)

    def scenario(self) -> Scenario:
        run = self.run
        if run.sac.smoke:
            return smoke_scenario(self.hdv_posterior, horizon=run.platoon.horizon or 60.0)
        return Scenario(
            leaders=self.leaders,
            hdv_posterior=self.hdv_posterior,
            ea_posterior=self.ea_posterior,
            ea_template=self.ea_template,
            reward=self.reward_params,
            v_e=run.platoon.v_e,
            horizon=run.platoon.horizon,
            n_followers=run.platoon.n_followers,
            a_min=run.cf.a_min,
            a_max=run.cf.a_max,
        )

    # --- rendering -----------------------------------------------------------

    @cached_property
    def jinja_env(self) -> Environment:
        env = Environment(
            loader=FileSystemLoader(str(self.settings.template_dir)),
            autoescape=False,
            undefined=StrictUndefined,
            keep_trailing_newline=True,
        )
        env.globals["fmt_num"] = fmt_num
        env.globals["fmt_pct"] = fmt_pct
        return env


def load_assets(run: RunConfig, template_path: Optional[str] = None) -> RunAssets:
    return RunAssets(run=run, settings=get_settings(), template_path=template_path)
