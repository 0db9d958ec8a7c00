from .app import app, run_analyze, run_oracle

__all__ = ["app", "run_analyze", "run_oracle"]
