"""Command line: a thin client over the analysis service.

By default requests are handled in-process by the same functions the HTTP
routes use; `--server URL` posts them to a running instance instead.

Exit codes: 0 success, 1 oracle check failed, 2 unusable input.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .constructor import InputError
from .service.app import run_analyze, run_oracle
from .service.schemas import AnalyzeRequest, AnalyzeResponse, OracleRequest, OracleResponse


def _parse_bindings(text: str) -> dict:
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise InputError(f"binding {part!r} is not of the form name=value")
        name, _, value = part.partition("=")
        try:
            out[name.strip()] = int(value)
        except ValueError as exc:
            raise InputError(f"binding {part!r}: value must be an integer") from exc
    if not out:
        raise InputError("empty binding list")
    return out


def _parse_truncate(text: str) -> dict:
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, rng = part.partition("=")
        lo, _, hi = rng.partition("..")
        try:
            out[name.strip()] = (int(lo), int(hi))
        except ValueError as exc:
            raise InputError(f"truncation {part!r}: expected name=lo..hi") from exc
    return out


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _meta_line() -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return f"# poa {__version__} {stamp}"


def _post(server: str, route: str, payload: dict, model):
    import httpx

    resp = httpx.post(server.rstrip("/") + route, json=payload, timeout=300.0)
    if resp.status_code == 400:
        raise InputError(resp.json().get("detail", "bad request"))
    resp.raise_for_status()
    return model.model_validate(resp.json())


def _cmd_analyze(args) -> int:
    check = None
    if args.check is not None:
        check = _parse_bindings(args.check) if args.check.strip() else {}
    req = AnalyzeRequest(
        program=_read(args.program),
        dist=_read(args.dist),
        check=check,
        expect=args.expect,
        assume=args.assume or [],
        budget=args.budget,
        oracle_budget=args.oracle_budget,
        trace=args.trace,
        csv=args.csv is not None,
    )
    if args.server:
        resp = _post(args.server, "/analyze", req.model_dump(), AnalyzeResponse)
    else:
        resp = run_analyze(req)
    if not args.no_meta:
        print(_meta_line())
    if args.trace:
        for line in resp.trace:
            print(f"| {line}")
    print(resp.report, end="")
    if args.csv is not None:
        path = Path(args.csv)
        content = resp.dist_csv or resp.bounds_csv or ""
        path.write_text(content)
        if resp.bounds_csv and resp.dist_csv:
            bounds_path = path.with_suffix(".bounds.csv")
            bounds_path.write_text(resp.bounds_csv)
            print(f"csv: {path} and {bounds_path}")
        else:
            print(f"csv: {path}")
    return resp.exit_code


def _cmd_oracle(args) -> int:
    req = OracleRequest(
        program=_read(args.program),
        dist=_read(args.dist),
        bindings=_parse_bindings(args.bind) if args.bind else {},
        budget=args.budget,
        truncate=_parse_truncate(args.truncate) if args.truncate else None,
    )
    if args.server:
        resp = _post(args.server, "/oracle", req.model_dump(), OracleResponse)
    else:
        resp = run_oracle(req)
    if not args.no_meta:
        print(_meta_line())
    if args.csv is not None:
        Path(args.csv).write_text(resp.csv)
        print(f"csv: {args.csv}")
    else:
        print(resp.csv, end="")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poa", description="probabilistic output analysis")
    parser.add_argument("--version", action="version", version=f"poa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="derive the output distribution of a program")
    pa.add_argument("program", help="program file (one definition per line)")
    pa.add_argument("dist", help="input distribution file")
    pa.add_argument("--check", metavar="n=K[,m=J]", nargs="?", const="", default=None,
                    help="run the enumeration oracle (bindings needed when the distribution has parameters)")
    pa.add_argument("--expect", action="store_true", help="print the expected value or interval")
    pa.add_argument("--csv", metavar="PATH", nargs="?", const="poa.csv", default=None,
                    help="write the evaluated distribution table (needs --check or no parameters)")
    pa.add_argument("--trace", action="store_true", help="print the rewrite derivation")
    pa.add_argument("--budget", type=int, default=10_000, help="rewrite step budget")
    pa.add_argument("--oracle-budget", type=int, default=10_000, help="interpreter step budget for the oracle")
    pa.add_argument("--assume", action="append", metavar="COND", help="side condition, e.g. 'n >= 1'")
    pa.add_argument("--no-meta", action="store_true", help="suppress the version/timestamp line")
    pa.add_argument("--server", metavar="URL", help="send the request to a running service instead")
    pa.set_defaults(func=_cmd_analyze)

    po = sub.add_parser("oracle", help="exhaustive enumeration only")
    po.add_argument("program")
    po.add_argument("dist")
    po.add_argument("--bind", metavar="n=K[,m=J]", help="parameter values")
    po.add_argument("--budget", type=int, default=10_000)
    po.add_argument("--truncate", metavar="x=lo..hi", help="bounds for unbounded-support variables")
    po.add_argument("--csv", metavar="PATH", nargs="?", const=None, default=None)
    po.add_argument("--no-meta", action="store_true")
    po.add_argument("--server", metavar="URL")
    po.set_defaults(func=_cmd_oracle)

    ps = sub.add_parser("serve", help="run the HTTP service")
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--port", type=int, default=8000)
    ps.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
