"""HTTP surface: request/response models over the pipeline."""

from fastapi.testclient import TestClient

from poa.service.app import app, run_analyze, run_oracle
from poa.service.schemas import AnalyzeRequest, OracleRequest

from conftest import sample

client = TestClient(app)


def test_health():
    resp = client.get("/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"


def test_analyze_endpoint_add():
    resp = client.post(
        "/analyze",
        json={"program": sample("add.fun"), "dist": sample("uniform2.dist")},
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["closed_form"] == "1/(n*n)*max(min(n,z-1) - max(1,z-n) + 1,0)"
    assert body["status"] == "closed"
    assert body["exit_code"] == 0
    assert body["report"].startswith(body["closed_form"])


def test_analyze_endpoint_check_and_expect():
    resp = client.post(
        "/analyze",
        json={
            "program": sample("max.fun"),
            "dist": sample("uniform2.dist"),
            "check": {"n": 3},
            "expect": True,
        },
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["check_ok"] is True
    assert body["expected"] == "22/9"
    assert body["termination"] == "terminates"


def test_analyze_endpoint_residual_bounds():
    resp = client.post(
        "/analyze",
        json={
            "program": sample("fourbranch.fun"),
            "dist": sample("uniform4.dist"),
            "check": {},
            "expect": True,
            "csv": True,
        },
    )
    body = resp.json()
    assert body["status"] == "residual"
    assert body["flags"] == ["spin"]
    assert body["expected_interval"] == ["2", "3"]
    assert body["bounds_csv"].splitlines()[0] == "z,under,over,f_down,f_up"


def test_analyze_endpoint_bad_program_is_400():
    resp = client.post("/analyze", json={"program": "f(x) = f(x+1) + 1", "dist": "px(x) = C(x = 1)"})
    assert resp.status_code == 400
    assert "recursive call" in resp.json()["detail"]


def test_oracle_endpoint_rows():
    resp = client.post(
        "/oracle",
        json={"program": sample("add.fun"), "dist": sample("uniform2.dist"), "bindings": {"n": 2}},
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["rows"] == [
        {"value": "2", "numerator": 1, "denominator": 4},
        {"value": "3", "numerator": 1, "denominator": 2},
        {"value": "4", "numerator": 1, "denominator": 4},
    ]
    assert body["nonterm_numerator"] == 0


def test_oracle_endpoint_error_is_400():
    resp = client.post(
        "/oracle",
        json={"program": sample("add.fun"), "dist": "px(x) = C(1 <= x <= 0) * 1/2\npy(y) = C(y = 1)"},
    )
    assert resp.status_code == 400


def test_handlers_match_endpoints_in_process():
    req = AnalyzeRequest(program=sample("add.fun"), dist=sample("uniform2.dist"))
    local = run_analyze(req)
    remote = client.post("/analyze", json=req.model_dump()).json()
    assert local.closed_form == remote["closed_form"]
    assert local.report == remote["report"]

    oreq = OracleRequest(program=sample("add.fun"), dist=sample("uniform2.dist"), bindings={"n": 2})
    assert run_oracle(oreq).csv == client.post("/oracle", json=oreq.model_dump()).json()["csv"]
