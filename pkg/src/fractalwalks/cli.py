"""Command-line client for the experiment service.

Every subcommand speaks to the HTTP service: by default an in-process
instance (no socket, same filesystem), with --server pointing the same
requests at a remote host. Exit codes follow the process protocol:
0 ok, 2 config error, 3 numerical failure, 4 invariant violation.

Heavy imports happen after argument parsing so that --threads can pin
the BLAS thread pools through environment variables, which the pools
read once at load time.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .errors import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK

_TAG_BY_COMMAND = {
    "graph": "volume",
    "identities": "identities",
    "hkp": "hkp",
    "csj": "csj",
    "nash": "nash",
    "exit": "exit",
    "davies": "davies",
}

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _apply_threads(n: int | None) -> None:
    if n is None:
        return
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        # starlette asks for httpx2, which the package index does not
        # carry; plain httpx still drives the in-process transport.
        warnings.filterwarnings("ignore", message=".*httpx.*")
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _fail(response) -> int:
    """Print a transport or service error and return the exit code."""
    try:
        body = response.json()
    except ValueError:
        body = {}
    if isinstance(body, dict) and "error" in body:
        print(f"error: {body['error']}", file=sys.stderr)
        return int(body.get("exit_code", EXIT_NUMERICAL))
    print(f"error: HTTP {response.status_code}: {response.text[:500]}", file=sys.stderr)
    return EXIT_CONFIG if response.status_code == 422 else EXIT_NUMERICAL


def _print_summary(summary: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(summary, indent=2, sort_keys=True))
        return
    checks = summary.get("checks", {})
    for name in sorted(checks):
        verdict = "pass" if checks[name] else "FAIL"
        print(f"  check {name}: {verdict}")
    constants = summary.get("constants", {})
    for name in sorted(constants):
        value = constants[name]
        if isinstance(value, (int, float, str)):
            print(f"  {name} = {value}")
    if "error" in summary:
        print(f"  error: {summary['error']}")


def _write_returned_files(contents: dict, out_dir: str) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in sorted(contents.items()):
        path = out / name
        path.write_text(text, encoding="utf-8", newline="\n")
        written.append(str(path))
    return written


def _cmd_experiment(args, tag: str) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        print(f"error: config file not found: {config_path}", file=sys.stderr)
        return EXIT_CONFIG
    request = {
        "config_text": config_path.read_text(encoding="utf-8"),
        "tag": tag,
        "seed": args.seed,
        "out_dir": args.out,
        "cache_dir": args.cache_dir,
        "return_files": bool(args.server),
    }
    if tag == "volume":
        from .errors import FractalWalksError

        try:
            graph_request = {"graph": _graph_section(request["config_text"])}
        except FractalWalksError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return exc.exit_code
    with _client(args.server) as client:
        if tag == "volume":
            graph_resp = client.post("/graph/summary", json=graph_request)
            if graph_resp.status_code != 200:
                return _fail(graph_resp)
            info = graph_resp.json()
            print(
                f"graph {info['generator']} {info['params']}: "
                f"{info['n_vertices']} vertices, {info['n_edges']} edges, "
                f"diameter {info['diameter']}, core radius {info['core_radius']}"
            )
        response = client.post("/experiment/run", json=request)
    if response.status_code != 200:
        return _fail(response)
    body = response.json()
    print(f"tag={body.get('tag')} config={body.get('config_hash')} exit={body['exit_code']}")
    _print_summary(body.get("summary", {}), args.json)
    files = body.get("files", [])
    if args.server and body.get("file_contents"):
        files = _write_returned_files(body["file_contents"], args.out or "reports")
    for f in files:
        print(f"  wrote {f}")
    return int(body["exit_code"])


def _graph_section(config_text: str) -> dict:
    from .config import parse_config_text

    cfg = parse_config_text(config_text, tag="volume")
    return {"generator": cfg.graph.generator, "params": cfg.graph.params}


def _cmd_kernel(args) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        print(f"error: config file not found: {config_path}", file=sys.stderr)
        return EXIT_CONFIG
    from .config import parse_config_text
    from .errors import FractalWalksError

    try:
        cfg = parse_config_text(config_path.read_text(encoding="utf-8"), tag="volume")
    except FractalWalksError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    k = cfg.kernel
    request = {
        "graph": {"generator": cfg.graph.generator, "params": cfg.graph.params},
        "kernel": {
            "kind": k.kind,
            "beta": k.beta,
            "laziness": k.laziness,
            "n_terms": k.n_terms,
            "perturb_seed": k.perturb_seed,
            "perturb_amplitude": k.perturb_amplitude,
        },
        "cache_dir": args.cache_dir,
    }
    with _client(args.server) as client:
        response = client.post("/kernel/build", json=request)
    if response.status_code != 200:
        return _fail(response)
    body = response.json()
    if args.json:
        print(json.dumps(body, indent=2, sort_keys=True))
        return EXIT_OK
    print(
        f"kernel {body['kind']} on {body['n_vertices']} vertices "
        f"(beta={body['beta']}, cache {body['cache']})"
    )
    print(f"  fingerprint = {body['fingerprint']}")
    print(f"  markov defect = {body['markov_defect']:.3e}")
    print(f"  symmetry defect = {body['symmetry_defect']:.3e}")
    for w in body.get("warnings", []):
        print(f"  warning: {w}")
    return EXIT_OK


def _collect_summaries(paths: list[str]) -> list[str]:
    found: list[str] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            found.extend(str(q) for q in sorted(path.glob("*_summary.json")))
        else:
            found.append(str(path))
    return found


def _cmd_report(args) -> int:
    summaries = _collect_summaries(args.summaries)
    if not summaries:
        print("error: no summary files found", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or "reports"
    request: dict = {"out_dir": out_dir, "return_files": bool(args.server)}
    if args.server:
        request["summary_texts"] = [
            Path(p).read_text(encoding="utf-8") for p in summaries
        ]
    else:
        request["summary_paths"] = summaries
    with _client(args.server) as client:
        response = client.post("/report/consolidate", json=request)
    if response.status_code != 200:
        return _fail(response)
    body = response.json()
    if args.json:
        print(json.dumps(body["body"], indent=2, sort_keys=True))
    else:
        notes = body["body"].get("notes", [])
        tags = sorted(body["body"].get("experiments", {}))
        print(f"consolidated {len(summaries)} summaries: tags {', '.join(tags) or 'none'}")
        for note in notes:
            print(f"  note: {note}")
    files = body.get("files", [])
    if args.server and body.get("file_contents"):
        files = _write_returned_files(body["file_contents"], out_dir)
    for f in files:
        print(f"  wrote {f}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fractalwalks",
        description="Heavy-tailed random walks on fractal-like graphs: "
        "build graphs and kernels, run estimate checks, emit reports.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, metavar="N",
                        help="cap BLAS thread pools at N threads")
    common.add_argument("--server", metavar="URL",
                        help="send requests to a running service instead of in-process")
    common.add_argument("--cache-dir", metavar="DIR",
                        help="kernel cache directory (overrides FRACTALWALKS_CACHE_DIR)")
    common.add_argument("--json", action="store_true",
                        help="print the raw JSON summary instead of the digest")

    run_common = argparse.ArgumentParser(add_help=False, parents=[common])
    run_common.add_argument("--config", required=True, metavar="PATH",
                            help="experiment config file (INI or JSON)")
    run_common.add_argument("--out", metavar="DIR",
                            help="artifact directory (default: config out_dir)")
    run_common.add_argument("--seed", type=int, metavar="N",
                            help="override the experiment seed")

    descriptions = {
        "graph": "summarize the graph and fit the volume growth exponent",
        "kernel": "build (or load from cache) the configured kernel and report defects",
        "hkp": "check the two-sided heat kernel envelope on core pairs",
        "csj": "check cutoff invariants and fit cutoff energy constants",
        "nash": "fit the Nash inequality constant over ball indicators",
        "exit": "Monte Carlo early-exit probabilities at polynomial horizons",
        "davies": "check perturbed-semigroup inequalities and off-diagonal decay",
        "identities": "verify the algebraic energy and duality identities",
    }
    for name, tag in _TAG_BY_COMMAND.items():
        p = sub.add_parser(name, parents=[run_common], help=descriptions[name])
        p.set_defaults(func=lambda a, t=tag: _cmd_experiment(a, t))
    kp = sub.add_parser("kernel", parents=[common], help=descriptions["kernel"])
    kp.add_argument("--config", required=True, metavar="PATH",
                    help="experiment config file (INI or JSON)")
    kp.set_defaults(func=_cmd_kernel)

    rp = sub.add_parser("report", parents=[common],
                        help="consolidate run summaries into one JSON plus plot CSVs")
    rp.add_argument("summaries", nargs="+", metavar="SUMMARY",
                    help="summary JSON files or directories containing them")
    rp.add_argument("--out", metavar="DIR", help="output directory (default: reports)")
    rp.set_defaults(func=_cmd_report)

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(func=_cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(getattr(args, "threads", None))
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
