# takeover/engine/steps/__init__.py
from takeover.engine.runner import StepRegistry

from .calibrate import step_calibrate_abc_v1, step_calibrate_bundle_v1, step_calibrate_export_v1
from .common import step_manifest_v1
from .evaluate import step_evaluate_controllers_v1, step_evaluate_export_v1
from .report import step_report_collect_v1, step_report_render_v1
from .simulate import step_simulate_batch_v1, step_simulate_export_v1
from .train import step_train_sac_v1


def register_all(registry: StepRegistry) -> None:
    registry.register("simulate.batch.v1", step_simulate_batch_v1)
    registry.register("simulate.export.v1", step_simulate_export_v1)

    registry.register("calibrate.bundle.v1", step_calibrate_bundle_v1)
    registry.register("calibrate.abc.v1", step_calibrate_abc_v1)
    registry.register("calibrate.export.v1", step_calibrate_export_v1)

    registry.register("train.sac.v1", step_train_sac_v1)

    registry.register("evaluate.controllers.v1", step_evaluate_controllers_v1)
    registry.register("evaluate.export.v1", step_evaluate_export_v1)

    registry.register("report.collect.v1", step_report_collect_v1)
    registry.register("report.render.v1", step_report_render_v1)

    registry.register("manifest.v1", step_manifest_v1)
