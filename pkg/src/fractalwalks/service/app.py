"""FastAPI application exposing graph, kernel, and experiment runs.

The service is a stateless wrapper over the library: every request
carries the full recipe, artifacts land on the service host filesystem,
and domain errors map to HTTP 400 with the library's exit-code protocol
in the body (0 ok, 2 config, 3 numerical, 4 invariant).
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import GraphSpec, KernelSpec, parse_config_text
from ..errors import FractalWalksError
from ..experiments import (
    build_graph_from_spec,
    build_kernel_from_spec,
    emit_summary,
    kernel_cache_path,
    kernel_spec_fingerprint,
    run_experiment,
)
from .models import (
    ConsolidateRequest,
    ConsolidateResponse,
    ErrorBody,
    ExperimentRunRequest,
    ExperimentRunResponse,
    GraphSummaryRequest,
    GraphSummaryResponse,
    HealthResponse,
    KernelBuildRequest,
    KernelBuildResponse,
)

__all__ = ["create_app"]


def _read_artifacts(paths: list[str]) -> dict[str, str]:
    out = {}
    for p in paths:
        path = Path(p)
        out[path.name] = path.read_text(encoding="utf-8")
    return out


def create_app() -> FastAPI:
    app = FastAPI(title="fractalwalks", version=__version__)

    @app.exception_handler(FractalWalksError)
    async def _domain_error(request: Request, exc: FractalWalksError):
        body = ErrorBody(
            error=str(exc), error_kind=type(exc).__name__, exit_code=exc.exit_code
        )
        return JSONResponse(status_code=400, content=body.model_dump())

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        import numpy
        import scipy

        return HealthResponse(
            package="fractalwalks",
            versions={
                "package": __version__,
                "numpy": numpy.__version__,
                "scipy": scipy.__version__,
            },
        )

    @app.post("/graph/summary", response_model=GraphSummaryResponse)
    def graph_summary(req: GraphSummaryRequest) -> GraphSummaryResponse:
        g = build_graph_from_spec(
            GraphSpec(generator=req.graph.generator, params=dict(req.graph.params))
        )
        return GraphSummaryResponse(
            generator=g.generator,
            params={k: int(v) for k, v in g.params.items()},
            n_vertices=g.n_vertices,
            n_edges=g.n_edges,
            diameter=g.diameter(),
            core_radius=g.core_radius,
            boundary_size=len(g.boundary),
            nominal_df=g.nominal_df,
            nominal_dw=g.nominal_dw,
            total_mass=float(g.mu.sum()),
            fingerprint=g.fingerprint(),
        )

    @app.post("/kernel/build", response_model=KernelBuildResponse)
    def kernel_build(req: KernelBuildRequest) -> KernelBuildResponse:
        g = build_graph_from_spec(
            GraphSpec(generator=req.graph.generator, params=dict(req.graph.params))
        )
        ks = KernelSpec(**req.kernel.model_dump())
        ks.validate()
        path = kernel_cache_path(g, ks, req.cache_dir)
        if path is None:
            cache = "off"
        elif path.exists():
            cache = "hit"
        else:
            cache = "miss"
        K = build_kernel_from_spec(g, ks, cache_dir=req.cache_dir)
        return KernelBuildResponse(
            kind=K.kind,
            n_vertices=K.n,
            beta=K.beta,
            fingerprint=kernel_spec_fingerprint(g, ks),
            markov_defect=K.markov_defect(),
            symmetry_defect=K.symmetry_defect(),
            is_markov=K.is_markov,
            cache=cache,
            warnings=K.warnings(),
        )

    @app.post("/experiment/run", response_model=ExperimentRunResponse)
    def experiment_run(req: ExperimentRunRequest) -> ExperimentRunResponse:
        try:
            cfg = parse_config_text(req.config_text, tag=req.tag, seed=req.seed)
        except FractalWalksError as exc:
            return ExperimentRunResponse(
                exit_code=exc.exit_code,
                ok=False,
                tag=req.tag,
                summary={"error": str(exc), "error_kind": type(exc).__name__},
            )
        result = run_experiment(cfg, base_dir=req.out_dir, cache_dir=req.cache_dir)
        return ExperimentRunResponse(
            exit_code=result.status,
            ok=result.ok,
            tag=cfg.tag,
            config_hash=result.summary.get("config_hash"),
            out_dir=result.out_dir,
            files=list(result.files),
            summary=result.summary,
            file_contents=_read_artifacts(result.files) if req.return_files else None,
        )

    @app.post("/report/consolidate", response_model=ConsolidateResponse)
    def report_consolidate(req: ConsolidateRequest) -> ConsolidateResponse:
        paths = [Path(p) for p in req.summary_paths]
        with tempfile.TemporaryDirectory() as tmp:
            for i, text in enumerate(req.summary_texts):
                # Inline texts become files so path and text inputs share
                # one consolidation routine; numbering keeps input order.
                p = Path(tmp) / f"inline_{i:04d}_summary.json"
                p.write_text(text, encoding="utf-8")
                paths.append(p)
            out = emit_summary(paths, req.out_dir)
        return ConsolidateResponse(
            files=list(out["files"]),
            body=out["body"],
            file_contents=_read_artifacts(out["files"]) if req.return_files else None,
        )

    return app
