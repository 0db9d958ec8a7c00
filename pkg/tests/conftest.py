"""Shared fixtures: sample files and a cached pipeline runner."""

from __future__ import annotations

import functools
from pathlib import Path

import pytest

from poa import lang
from poa.constructor import build_dist_program, parse_dist_file
from poa.simplifier import simplify_dist_program
from poa.unfolder import unfold_all

SAMPLES = Path(__file__).resolve().parent.parent / "samples"
GOLDEN = Path(__file__).resolve().parent / "golden"


def sample(name: str) -> str:
    return (SAMPLES / name).read_text()


@functools.lru_cache(maxsize=None)
def run_pipeline(prog_name: str, dist_name: str, budget: int = 10_000):
    """construct -> unfold -> simplify, cached across tests."""
    program = lang.parse_program(sample(prog_name))
    dist, assumptions = parse_dist_file(sample(dist_name))
    dp = build_dist_program(program, dist)
    dp = unfold_all(dp, None)
    dp, result = simplify_dist_program(dp, assumptions, budget, None)
    return program, dist, assumptions, dp, result


@pytest.fixture
def samples_dir() -> Path:
    return SAMPLES
