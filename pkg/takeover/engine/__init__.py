from takeover.engine.facade import run_workflow

__all__ = ["run_workflow"]
