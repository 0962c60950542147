# takeover/cli.py
"""
Command line entry point: `takeover-lab <workflow> [options]`.

Exit codes: 0 success, 2 invalid input or configuration, 3 calibration
failure, 4 checkpoint error, 5 training divergence, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Dict, Optional, Sequence

import torch

from takeover.core.settings import get_settings
from takeover.engine.facade import failure_summary, run_workflow
from takeover.errors import LabError, exit_code_for
from takeover.logging_config import get_logger, setup_logging
from takeover.schemas.run_config import RunConfig, Workflow, load_run_config

logger = get_logger("cli")

# CLI flag dest -> dotted config key
FLAG_KEYS: Dict[str, str] = {
    "seed": "seed",
    "runs": "runs",
    "threads": "threads",
    "controllers": "controllers",
    "out": "paths.output",
    "leader": "paths.leader_profile",
    "hdv_posterior": "paths.hdv_posterior",
    "av_posterior": "paths.av_posterior",
    "ea_posterior": "paths.ea_posterior",
    "bundle": "paths.observed_bundle",
    "checkpoint": "paths.checkpoint",
    "source": "paths.source",
    "followers": "platoon.n_followers",
    "horizon": "platoon.horizon",
    "force_takeover_at": "platoon.force_takeover_at",
    "suppress_takeover": "platoon.suppress_takeover",
    "av": "cf.av",
    "particles": "abc.particles",
    "generations": "abc.generations",
    "synthetic": "abc.synthetic",
    "pooled": "abc.pooled",
    "episodes": "sac.episodes",
    "smoke": "sac.smoke",
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, help="dotenv-style file of key=value settings")
    parser.add_argument(
        "--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
        help="override one dotted config key (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="master seed (required here or in the config)")
    parser.add_argument("--threads", type=int, help="worker threads for batches")
    parser.add_argument("--out", type=str, help="output directory")
    parser.add_argument("--log-level", type=str, default=None, help="loguru level")


def _platoon(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--runs", type=int, help="number of rollouts")
    parser.add_argument("--followers", type=int, help="human followers behind the AV")
    parser.add_argument("--horizon", type=float, help="rollout horizon in seconds")
    parser.add_argument("--leader", type=str, help="leader profile CSV or directory of CSVs")
    parser.add_argument("--hdv-posterior", type=str, help="human-driver parameter particles")
    parser.add_argument("--ea-posterior", type=str, help="takeover-model parameter particles")
    parser.add_argument("--force-takeover-at", type=float, help="force the takeover at this time (s)")
    parser.add_argument("--suppress-takeover", action="store_true", default=None, help="never take over")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="takeover-lab", description="Car-following takeover lab")
    sub = parser.add_subparsers(dest="workflow", required=True)

    p = sub.add_parser(Workflow.SIMULATE.value, help="roll out platoons under the takeover model")
    _common(p)
    _platoon(p)
    p.add_argument("--av", type=str, help="AV controller: hl | idm-pid | av-posterior")
    p.add_argument("--av-posterior", type=str, help="AV parameter particles")

    p = sub.add_parser(Workflow.CALIBRATE.value, help="fit takeover-model parameters to observed takeovers")
    _common(p)
    p.add_argument("--bundle", type=str, help="observed bundle directory (manifest.csv + traces)")
    p.add_argument("--hdv-posterior", type=str, help="human-driver parameter particles")
    p.add_argument("--particles", type=int, help="particles per generation")
    p.add_argument("--generations", type=int, help="maximum generations, generation 0 included")
    p.add_argument("--synthetic", type=int, help="synthesize this many instances instead of --bundle")
    p.add_argument("--pooled", action="store_true", default=None, help="one posterior over all instances")

    p = sub.add_parser(Workflow.TRAIN.value, help="train the control unit policy")
    _common(p)
    _platoon(p)
    p.add_argument("--episodes", type=int, help="training episodes")
    p.add_argument("--smoke", action="store_true", default=None, help="simplified deterministic scenario")

    p = sub.add_parser(Workflow.EVALUATE.value, help="compare controllers on matched seeds")
    _common(p)
    _platoon(p)
    p.add_argument("--checkpoint", type=str, help="policy checkpoint for the 'policy' controller")
    p.add_argument("--controllers", type=str, help="comma list of policy, idm-pid, hl")
    p.add_argument("--smoke", action="store_true", default=None, help="simplified deterministic scenario")

    p = sub.add_parser(Workflow.REPORT.value, help="render a markdown report of a workflow output")
    _common(p)
    p.add_argument("--source", type=str, help="workflow output directory (default: --out)")
    return parser


def flags_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, dest) for dest, key in FLAG_KEYS.items() if getattr(args, dest, None) is not None}


def _report_error(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, default=str), file=sys.stderr)


def execute(run: RunConfig) -> int:
    settings = get_settings()
    torch.set_num_threads(max(1, settings.TORCH_NUM_THREADS or run.threads))
    state = run_workflow(run)
    if state.status == "SUCCEEDED":
        print(json.dumps({"ok": True, "run_id": state.context.run_id, "output": str(run.output_dir)}))
        return 0
    exc = state.exception
    if isinstance(exc, LabError):
        payload = exc.to_dict()
    else:
        payload = {
            "ok": False,
            "error": {
                "type": type(exc).__name__ if exc else "PipelineFailed",
                "message": str(exc) if exc else "pipeline failed",
                "exit_code": exit_code_for(exc) if exc else 1,
            },
        }
    payload["pipeline"] = failure_summary(state)
    _report_error(payload)
    return exit_code_for(exc) if exc else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)
    setup_logging(args.log_level)

    try:
        run = load_run_config(args.workflow, args.config, args.sets, flags_from_args(args))
        run.check_paths()
    except LabError as exc:
        logger.error("invalid configuration: {}", exc.message)
        _report_error(exc.to_dict())
        return exc.exit_code

    return execute(run)


if __name__ == "__main__":
    sys.exit(main())
