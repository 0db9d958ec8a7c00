"""Command-line client."""

from pathlib import Path

import pytest

from poa.cli import main

from conftest import SAMPLES


def run_cli(capsys, *args):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_add_prints_closed_form_first(capsys):
    code, out, _ = run_cli(capsys, "analyze", SAMPLES / "add.fun", SAMPLES / "uniform2.dist", "--no-meta")
    assert code == 0
    assert out.splitlines()[0] == "1/(n*n)*max(min(n,z-1) - max(1,z-n) + 1,0)"


def test_analyze_max_check_expect(capsys):
    code, out, _ = run_cli(
        capsys, "analyze", SAMPLES / "max.fun", SAMPLES / "uniform2.dist",
        "--check", "n=3", "--expect", "--no-meta",
    )
    assert code == 0
    assert "check n=3: OK" in out
    assert "expected value n=3: 22/9" in out


def test_analyze_loop_with_bare_check(capsys):
    # the loop program has no symbolic parameters: bare --check runs the oracle
    code, out, _ = run_cli(
        capsys, "analyze", SAMPLES / "loop.fun", SAMPLES / "point.dist",
        "--check", "--expect", "--no-meta",
    )
    assert code == 0
    assert "nonterminating mass: 1" in out
    assert "termination: unknown" in out
    assert "unavailable (possible divergence)" in out


def test_check_with_missing_parameter_exits_two(capsys):
    code, _, err = run_cli(
        capsys, "analyze", SAMPLES / "add.fun", SAMPLES / "uniform2.dist",
        "--check", "m=3", "--no-meta",
    )
    assert code == 2
    assert "parameters" in err


def test_check_failure_exits_one(capsys):
    # starving the oracle's step budget makes the comparison fail honestly
    code, out, _ = run_cli(
        capsys, "analyze", SAMPLES / "add.fun", SAMPLES / "uniform2.dist",
        "--check", "n=5", "--oracle-budget", "1", "--no-meta",
    )
    assert code == 1
    assert "FAILED" in out
    assert "nonterminating mass n=5: 4/5" in out


def test_trace_flag_prints_derivation(capsys):
    code, out, _ = run_cli(
        capsys, "analyze", SAMPLES / "max.fun", SAMPLES / "uniform2.dist", "--trace", "--no-meta",
    )
    assert code == 0
    assert any(line.startswith("| ") for line in out.splitlines())


def test_assume_flag(capsys):
    code, out, _ = run_cli(
        capsys, "analyze", SAMPLES / "id.fun", SAMPLES / "uniform1.dist",
        "--assume", "n >= 1", "--no-meta",
    )
    assert code == 0


def test_csv_output(tmp_path, capsys):
    target = tmp_path / "dist.csv"
    code, out, _ = run_cli(
        capsys, "analyze", SAMPLES / "add.fun", SAMPLES / "uniform2.dist",
        "--check", "n=2", "--csv", target, "--no-meta",
    )
    assert code == 0
    lines = target.read_text().strip().splitlines()
    assert lines[0] == "value,numerator,denominator"
    assert "3,1,2" in lines


def test_oracle_subcommand_csv(capsys):
    code, out, _ = run_cli(
        capsys, "oracle", SAMPLES / "add.fun", SAMPLES / "uniform2.dist",
        "--bind", "n=2", "--no-meta",
    )
    assert code == 0
    assert out.splitlines()[1] == "2,1,4"


def test_oracle_empty_support_exits_two(capsys, tmp_path):
    bad = tmp_path / "bad.dist"
    bad.write_text("px(x) = C(1 <= x <= 0) * 1/2\npy(y) = C(y = 1)\n")
    code, _, err = run_cli(capsys, "oracle", SAMPLES / "add.fun", bad, "--no-meta")
    assert code == 2
    assert "error:" in err


def test_missing_file_exits_two(capsys):
    code, _, err = run_cli(capsys, "analyze", SAMPLES / "missing.fun", SAMPLES / "uniform2.dist")
    assert code == 2


def test_reports_are_reproducible(capsys):
    _, first, _ = run_cli(capsys, "analyze", SAMPLES / "max.fun", SAMPLES / "uniform2.dist",
                          "--check", "n=2", "--no-meta")
    _, second, _ = run_cli(capsys, "analyze", SAMPLES / "max.fun", SAMPLES / "uniform2.dist",
                           "--check", "n=2", "--no-meta")
    assert first == second


def test_meta_line_present_by_default(capsys):
    code, out, _ = run_cli(capsys, "analyze", SAMPLES / "id.fun", SAMPLES / "uniform1.dist")
    assert code == 0
    assert out.splitlines()[0].startswith("# poa 0.1.0 ")


def test_remote_mode_against_live_server(tmp_path, capsys):
    import socket
    import threading
    import time

    import uvicorn

    from poa.service.app import app

    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]

    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    try:
        deadline = time.time() + 15
        import httpx

        while time.time() < deadline:
            try:
                if httpx.get(f"http://127.0.0.1:{port}/health", timeout=1.0).status_code == 200:
                    break
            except httpx.HTTPError:
                time.sleep(0.1)
        else:
            pytest.skip("server did not come up")
        code, out, _ = run_cli(
            capsys, "analyze", SAMPLES / "add.fun", SAMPLES / "uniform2.dist",
            "--no-meta", "--server", f"http://127.0.0.1:{port}",
        )
        assert code == 0
        assert out.splitlines()[0] == "1/(n*n)*max(min(n,z-1) - max(1,z-n) + 1,0)"
    finally:
        server.should_exit = True
        thread.join(timeout=10)
