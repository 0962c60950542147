# takeover/services/exports.py
"""File outputs. Nothing here writes timestamps, so reruns are byte-identical."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence

import numpy as np
import pandas as pd

from takeover.services.platoon import Rollout

ROLLOUT_COLUMNS = ("t", "id", "role", "x", "v", "a", "mode", "E", "U")


def _plain(value: Any) -> Any:
    """JSON-safe scalars: numpy types unwrapped, non-finite floats as strings."""
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return value.as_posix()
    return value


def write_json(obj: Any, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_jsonl(records: Iterable[Mapping[str, Any]], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_plain(rec), sort_keys=True) + "\n")
    return path


def read_jsonl(path: Path | str) -> List[Dict[str, Any]]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_table(frame: pd.DataFrame, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8", float_format="%.10g")
    return path


def rollout_frame(rollout: Rollout) -> pd.DataFrame:
    """Long format, one row per vehicle and tick; E and U are filled for the AV only."""
    n = rollout.n_ticks
    dt = rollout.trajectories[0].dt
    t = np.arange(n) * dt

    trace = rollout.ea_trace
    # evidence/dissimilarity per state tick: tick 0 holds E0, later ticks the post-update value
    E = np.full(n, np.nan)
    U = np.full(n, np.nan)
    E[0] = rollout.ea_params.E0
    m = min(len(trace), n - 1)
    E[1 : m + 1] = trace.E[:m]
    U[1 : m + 1] = trace.U[:m]
    if m + 1 < n:
        E[m + 1 :] = E[m]

    frames = []
    for k, traj in enumerate(rollout.trajectories):
        role = traj.samples[0].role.value
        frames.append(
            pd.DataFrame(
                {
                    "t": t,
                    "id": k,
                    "role": role,
                    "x": traj.y,
                    "v": traj.v,
                    "a": traj.a,
                    "mode": rollout.modes if k == 1 else 0,
                    "E": E if k == 1 else np.nan,
                    "U": U if k == 1 else np.nan,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)[list(ROLLOUT_COLUMNS)]


def write_rollout(rollout: Rollout, path: Path | str) -> Path:
    return write_table(rollout_frame(rollout), path)


def write_batch_index(entries: Sequence[Mapping[str, Any]], path: Path | str) -> Path:
    """Batch manifest: one entry per rollout with its seed and file."""
    return write_json({"rollouts": list(entries), "count": len(entries)}, path)
