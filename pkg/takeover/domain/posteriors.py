# takeover/domain/posteriors.py
"""
Particle sets over car-following parameters: the hybrid HDV posterior
(categorical mixture over the four human models) and the AV (HL) posterior.

File format: comma-delimited UTF-8 text with a header, one column per
parameter plus a `model` column. Columns a model does not use are left empty.

    model   columns
    IDM     v0,T,s0,a,b,delta
    FVDM    kappa,lam,V1,V2,C1,C2
    GFM     kappa,lam,V1,V2,C1,C2
    OVM     kappa,V1,V2,C1,C2
    HL      s0,h,k_s,k_v,order,c1..c<order>
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from takeover.core.rng import RngStream
from takeover.domain.cf_models import HDV_KINDS, PARAM_SCHEMA, CfKind, CfSpec
from takeover.errors import InvalidParameterError, PosteriorFormatError

DEFAULT_SHARES: Tuple[float, float, float, float] = (0.1, 0.1, 0.7, 0.1)


@dataclass(frozen=True)
class HdvPosterior:
    """Shares are ordered as HDV_KINDS: (IDM, FVDM, GFM, OVM)."""

    shares: Tuple[float, ...]
    particles: Mapping[CfKind, Tuple[CfSpec, ...]]

    def __post_init__(self) -> None:
        shares = tuple(float(s) for s in self.shares)
        if len(shares) != len(HDV_KINDS):
            raise InvalidParameterError(f"expected {len(HDV_KINDS)} shares, got {len(shares)}")
        if any(s < 0 for s in shares) or abs(sum(shares) - 1.0) > 1e-9:
            raise InvalidParameterError(f"shares must be a probability vector, got {shares}")
        particles = {CfKind(k): tuple(v) for k, v in self.particles.items()}
        for kind, specs in particles.items():
            for spec in specs:
                if spec.kind != kind:
                    raise InvalidParameterError(f"{spec.kind} particle filed under {kind}")
        object.__setattr__(self, "shares", shares)
        object.__setattr__(self, "particles", MappingProxyType(particles))

    def share_of(self, kind: CfKind) -> float:
        return self.shares[HDV_KINDS.index(kind)]

    def with_shares(self, shares: Sequence[float]) -> "HdvPosterior":
        return HdvPosterior(tuple(shares), dict(self.particles))

    def restricted(self, kind_to_indices: Mapping[CfKind, Sequence[int]]) -> "HdvPosterior":
        """Subset of particles per kind (used for train/test splits)."""
        subset = {
            kind: tuple(self.particles.get(kind, ())[i] for i in kind_to_indices.get(kind, ()))
            for kind in self.particles
        }
        return HdvPosterior(self.shares, subset)


@dataclass(frozen=True)
class AvPosterior:
    particles: Tuple[CfSpec, ...]

    def __post_init__(self) -> None:
        particles = tuple(self.particles)
        if not particles:
            raise InvalidParameterError("AV posterior must not be empty")
        for spec in particles:
            if spec.kind != CfKind.HL:
                raise InvalidParameterError(f"AV posterior holds HL particles only, got {spec.kind}")
        object.__setattr__(self, "particles", particles)


def sample_hybrid(rng: RngStream, post: HdvPosterior) -> CfSpec:
    """Draw a model kind from the shares, then one of its particles uniformly."""
    kind = HDV_KINDS[int(rng.choice(len(HDV_KINDS), p=post.shares))]
    specs = post.particles.get(kind, ())
    if not specs:
        raise InvalidParameterError(f"drawn model {kind} has an empty particle set")
    return specs[int(rng.integers(0, len(specs)))]


def sample_av(rng: RngStream, post: AvPosterior) -> CfSpec:
    return post.particles[int(rng.integers(0, len(post.particles)))]


# --- file IO ----------------------------------------------------------------

def _read_frame(path: Path) -> pd.DataFrame:
    if not path.exists():
        raise PosteriorFormatError(f"posterior file not found: {path}", path=str(path))
    try:
        return pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise PosteriorFormatError(f"cannot parse posterior file {path}: {exc}", path=str(path))


def row_to_spec(kind: CfKind, row: pd.Series, path: Path | str, index: int) -> CfSpec:
    params: Dict[str, float] = {}
    for key in PARAM_SCHEMA[kind]:
        if key not in row.index or pd.isna(row[key]):
            raise PosteriorFormatError(
                f"{path}: row {index} ({kind}) lacks parameter '{key}'", path=str(path), row=index
            )
        params[key] = float(row[key])
    coeffs: Tuple[float, ...] = ()
    if kind == CfKind.HL:
        order = int(row["order"]) if "order" in row.index and not pd.isna(row["order"]) else 0
        try:
            coeffs = tuple(float(row[f"c{j}"]) for j in range(1, order + 1))
        except KeyError as exc:
            raise PosteriorFormatError(
                f"{path}: row {index} declares order {order} but has no column {exc}",
                path=str(path), row=index,
            )
        if any(math.isnan(c) for c in coeffs):
            raise PosteriorFormatError(
                f"{path}: row {index} has empty filter coefficients", path=str(path), row=index
            )
        params["order"] = float(order)
    try:
        return CfSpec(kind, params, coeffs=coeffs)
    except InvalidParameterError as exc:
        raise PosteriorFormatError(f"{path}: row {index}: {exc}", path=str(path), row=index)


def load_hdv_posterior(
    path: Path | str, shares: Sequence[float] = DEFAULT_SHARES
) -> HdvPosterior:
    path = Path(path)
    frame = _read_frame(path)
    if "model" not in frame.columns:
        raise PosteriorFormatError(f"{path}: missing 'model' column", path=str(path))
    grouped: Dict[CfKind, List[CfSpec]] = {kind: [] for kind in HDV_KINDS}
    for index, row in frame.iterrows():
        try:
            kind = CfKind(str(row["model"]).strip().upper())
        except ValueError:
            raise PosteriorFormatError(
                f"{path}: row {index} has unknown model '{row['model']}'", path=str(path), row=index
            )
        if kind not in HDV_KINDS:
            raise PosteriorFormatError(
                f"{path}: row {index}: {kind} is not a human-driver model", path=str(path), row=index
            )
        grouped[kind].append(row_to_spec(kind, row, path, int(index)))
    return HdvPosterior(tuple(shares), {k: tuple(v) for k, v in grouped.items()})


def load_av_posterior(path: Path | str) -> AvPosterior:
    path = Path(path)
    frame = _read_frame(path)
    specs = []
    for index, row in frame.iterrows():
        if "model" in frame.columns and str(row["model"]).strip().upper() != CfKind.HL.value:
            raise PosteriorFormatError(
                f"{path}: row {index}: AV posterior rows must be HL", path=str(path), row=int(index)
            )
        specs.append(row_to_spec(CfKind.HL, row, path, int(index)))
    if not specs:
        raise PosteriorFormatError(f"{path}: AV posterior is empty", path=str(path))
    return AvPosterior(tuple(specs))


def specs_frame(specs: Sequence[CfSpec]) -> pd.DataFrame:
    return pd.DataFrame([spec.as_row() for spec in specs])


def save_posterior(specs: Sequence[CfSpec], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    specs_frame(specs).to_csv(path, index=False, encoding="utf-8")
    return path


def default_hdv_posterior(shares: Optional[Sequence[float]] = None) -> HdvPosterior:
    from takeover.core.settings import get_settings

    return load_hdv_posterior(
        get_settings().data_dir / "hdv_posterior.csv",
        DEFAULT_SHARES if shares is None else shares,
    )


def default_av_posterior() -> AvPosterior:
    from takeover.core.settings import get_settings

    return load_av_posterior(get_settings().data_dir / "av_posterior.csv")
