"""Request and response models for the analysis service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class AnalyzeRequest(BaseModel):
    program: str = Field(description="program source, one definition per line")
    dist: str = Field(description="input distribution declarations")
    check: Optional[dict[str, int]] = Field(default=None, description="parameter values for an oracle check")
    expect: bool = False
    assume: list[str] = Field(default_factory=list, description="extra side conditions, e.g. 'n >= 1'")
    budget: int = 10_000
    oracle_budget: int = 10_000
    trace: bool = False
    csv: bool = False


class AnalyzeResponse(BaseModel):
    status: str
    closed_form: str
    normal_form: str
    output_function: str
    out_var: str
    serialized: str
    flags: list[str]
    check_ok: Optional[bool]
    check_detail: str
    termination: Optional[str]
    expected: Optional[str]
    expected_interval: Optional[tuple[str, str]]
    nonterm_mass: Optional[str]
    dist_csv: Optional[str]
    bounds_csv: Optional[str]
    trace: list[str]
    report: str
    exit_code: int


class OracleRequest(BaseModel):
    program: str
    dist: str
    bindings: dict[str, int] = Field(default_factory=dict)
    budget: int = 10_000
    truncate: Optional[dict[str, tuple[int, int]]] = None


class OracleRow(BaseModel):
    value: str
    numerator: int
    denominator: int


class OracleResponse(BaseModel):
    rows: list[OracleRow]
    nonterm_numerator: int
    nonterm_denominator: int
    unresolved_numerator: int
    unresolved_denominator: int
    csv: str
    report: str


class HealthResponse(BaseModel):
    status: str
    version: str
