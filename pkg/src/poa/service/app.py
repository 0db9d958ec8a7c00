"""HTTP service wrapping the analysis pipeline."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..constructor import InputError
from ..pipeline import analyze, oracle_only
from .schemas import (
    AnalyzeRequest,
    AnalyzeResponse,
    HealthResponse,
    OracleRequest,
    OracleResponse,
    OracleRow,
)

app = FastAPI(title="poa", description="probabilistic output analysis", version=__version__)


def run_analyze(req: AnalyzeRequest) -> AnalyzeResponse:
    """Shared handler: the CLI calls this directly, the route wraps it."""
    outcome = analyze(
        program_text=req.program,
        dist_text=req.dist,
        check=req.check,
        expect=req.expect,
        assume=tuple(req.assume),
        budget=req.budget,
        oracle_budget=req.oracle_budget,
        want_trace=req.trace,
        want_csv=req.csv,
    )
    return AnalyzeResponse(
        status=outcome.status,
        closed_form=outcome.closed_form,
        normal_form=outcome.normal_form,
        output_function=outcome.output_function,
        out_var=outcome.out_var,
        serialized=outcome.serialized,
        flags=outcome.flags,
        check_ok=outcome.check_ok,
        check_detail=outcome.check_detail,
        termination=outcome.termination,
        expected=outcome.expected,
        expected_interval=outcome.expected_interval,
        nonterm_mass=outcome.nonterm_mass,
        dist_csv=outcome.dist_csv,
        bounds_csv=outcome.bounds_csv,
        trace=outcome.trace,
        report=outcome.report,
        exit_code=outcome.exit_code,
    )


def run_oracle(req: OracleRequest) -> OracleResponse:
    truncate = {k: tuple(v) for k, v in req.truncate.items()} if req.truncate else None
    outcome = oracle_only(req.program, req.dist, req.bindings, req.budget, truncate)
    return OracleResponse(
        rows=[OracleRow(value=v, numerator=n, denominator=d) for v, n, d in outcome.rows],
        nonterm_numerator=outcome.nonterm[0],
        nonterm_denominator=outcome.nonterm[1],
        unresolved_numerator=outcome.unresolved[0],
        unresolved_denominator=outcome.unresolved[1],
        csv=outcome.csv,
        report=outcome.report,
    )


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/analyze", response_model=AnalyzeResponse)
def analyze_route(req: AnalyzeRequest) -> AnalyzeResponse:
    try:
        return run_analyze(req)
    except InputError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


@app.post("/oracle", response_model=OracleResponse)
def oracle_route(req: OracleRequest) -> OracleResponse:
    try:
        return run_oracle(req)
    except InputError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
