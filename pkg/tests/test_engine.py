import json

import pytest

from takeover.core.settings import get_settings
from takeover.engine.config import StepConfig, load_engine_config, load_engine_config_file
from takeover.engine.context import EngineContext, StepResult
from takeover.engine.runner import StepRegistry, run_pipeline
from takeover.engine.steps import register_all
from takeover.errors import ConfigError, InputError


def _ok(state, step, assets):
    state.data.setdefault("order", []).append(step.id)
    return StepResult(status="OK", data={"seen": step.with_.get("value")})


def _failed(state, step, assets):
    return StepResult(status="FAILED", error="nothing to do")


def _boom(state, step, assets):
    raise InputError("missing input", path="x.csv")


def _registry():
    registry = StepRegistry()
    registry.register("ok", _ok)
    registry.register("failed", _failed)
    registry.register("boom", _boom)
    return registry


def _config(*steps):
    return load_engine_config(
        {
            "workflow": "unit",
            "pipeline": {"steps": [dict(id=f"s{i}", **s) for i, s in enumerate(steps)]},
        }
    )


@pytest.fixture
def ctx(tmp_path):
    return EngineContext(workflow="unit", run_id="abc123", seed=7, output_dir=tmp_path)


def test_registry():
    registry = _registry()
    assert "ok" in registry and "nope" not in registry
    with pytest.raises(ValueError):
        registry.register("ok", _ok)
    with pytest.raises(ConfigError, match="unknown step") as exc:
        registry.get("nope")
    assert exc.value.exit_code == 2
    assert exc.value.details["registered"] == ["boom", "failed", "ok"]


def test_every_packaged_step_is_registered():
    registry = StepRegistry()
    register_all(registry)
    config_dir = get_settings().engine_config_dir
    for workflow in ("simulate", "calibrate", "train", "evaluate", "report"):
        cfg = load_engine_config_file(config_dir / f"{workflow}.json")
        assert cfg.workflow == workflow
        for step in cfg.steps:
            assert step.use in registry, (workflow, step.use)


def test_engine_config_parsing(tmp_path):
    cfg = _config({"use": "ok", "with": {"value": 3}}, {"use": "ok", "on_fail": "CONTINUE"})
    assert [s.id for s in cfg.steps] == ["s0", "s1"]
    assert cfg.steps[0].with_ == {"value": 3}
    assert cfg.steps[1].on_fail == "CONTINUE" and cfg.steps[1].with_ == {}
    assert cfg.version == "1.0" and cfg.template_path is None

    with pytest.raises(ConfigError):
        load_engine_config_file(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps({"workflow": "x"}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_engine_config_file(broken)


def test_pipeline_runs_steps_in_order(ctx):
    cfg = _config({"use": "ok", "with": {"value": 1}}, {"use": "ok"})
    state = run_pipeline(ctx, cfg, _registry(), assets=None)
    assert state.status == "SUCCEEDED"
    assert state.data["order"] == ["s0", "s1"]
    assert state.data["steps"]["s0"] == {"seen": 1}
    messages = [e["message"] for e in state.logs]
    assert messages[0] == "pipeline_start" and messages[-1] == "pipeline_succeeded"
    assert all(e["run_id"] == "abc123" and e["seed"] == 7 for e in state.logs)
    json.dumps(state.logs)


def test_stop_on_failure(ctx):
    cfg = _config({"use": "ok"}, {"use": "failed"}, {"use": "ok"})
    state = run_pipeline(ctx, cfg, _registry(), assets=None)
    assert state.status == "FAILED" and state.failure_step == "s1"
    assert state.data["order"] == ["s0"]
    assert state.logs[-1]["message"] == "pipeline_failed"


def test_continue_on_failure(ctx):
    cfg = _config({"use": "failed", "on_fail": "CONTINUE"}, {"use": "ok"})
    state = run_pipeline(ctx, cfg, _registry(), assets=None)
    assert state.data["order"] == ["s1"]
    assert state.failure_step == "s0"
    assert any(e["message"] == "step_failed_continue" for e in state.logs)
    assert state.status == "SUCCEEDED"


def test_exceptions_are_kept_for_exit_codes(ctx):
    cfg = _config({"use": "boom"})
    state = run_pipeline(ctx, cfg, _registry(), assets=None)
    assert state.status == "FAILED"
    assert isinstance(state.exception, InputError)
    exc_event = next(e for e in state.logs if e["message"] == "step_exception")
    assert exc_event["exit_code"] == 2

    unknown = run_pipeline(ctx, _config({"use": "not-registered"}), _registry(), assets=None)
    assert unknown.status == "FAILED" and isinstance(unknown.exception, ConfigError)
    assert next(e for e in unknown.logs if e["message"] == "step_exception")["exit_code"] == 2


def test_record_file_is_relative_to_output(ctx, tmp_path):
    from takeover.engine.context import PipelineState

    state = PipelineState(context=ctx)
    target = tmp_path / "sub" / "a.csv"
    assert state.record_file(target) == target
    assert state.files == ["sub/a.csv"]
    assert isinstance(StepConfig("x", "ok", {}).with_, dict)
