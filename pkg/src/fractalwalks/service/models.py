"""Request and response shapes for the HTTP face of the laboratory.

Field names mirror the config file sections, so a JSON request body and
an INI recipe describe the same experiment. Artifact files are written
on the service host; clients that cannot see that filesystem ask for
inline copies with ``return_files``.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

__all__ = [
    "GraphSpecModel",
    "KernelSpecModel",
    "HealthResponse",
    "GraphSummaryRequest",
    "GraphSummaryResponse",
    "KernelBuildRequest",
    "KernelBuildResponse",
    "ExperimentRunRequest",
    "ExperimentRunResponse",
    "ConsolidateRequest",
    "ConsolidateResponse",
    "ErrorBody",
]


class GraphSpecModel(BaseModel):
    """Mirrors the [graph] config section."""

    generator: Literal["lattice", "gasket", "vicsek"]
    params: dict[str, int] = Field(default_factory=dict)


class KernelSpecModel(BaseModel):
    """Mirrors the [kernel] config section."""

    kind: Literal["nearest-neighbor", "direct", "subordinated"]
    beta: float | None = None
    laziness: float = 0.0
    n_terms: int | None = None
    perturb_seed: int | None = None
    perturb_amplitude: float | None = None


class HealthResponse(BaseModel):
    status: Literal["ok"] = "ok"
    package: str
    versions: dict[str, str]


class GraphSummaryRequest(BaseModel):
    graph: GraphSpecModel


class GraphSummaryResponse(BaseModel):
    generator: str
    params: dict[str, int]
    n_vertices: int
    n_edges: int
    diameter: int
    core_radius: int
    boundary_size: int
    nominal_df: float
    nominal_dw: float
    total_mass: float
    fingerprint: str


class KernelBuildRequest(BaseModel):
    graph: GraphSpecModel
    kernel: KernelSpecModel
    cache_dir: str | None = None


class KernelBuildResponse(BaseModel):
    kind: str
    n_vertices: int
    beta: float | None
    fingerprint: str
    markov_defect: float
    symmetry_defect: float
    is_markov: bool
    cache: Literal["hit", "miss", "off"]
    warnings: list[str] = Field(default_factory=list)


class ExperimentRunRequest(BaseModel):
    """One experiment run; the config travels as INI or JSON text.

    ``tag`` and ``seed`` override the [experiment] section before
    validation; ``out_dir`` redirects artifacts without entering the
    config hash.
    """

    config_text: str
    tag: str | None = None
    seed: int | None = None
    out_dir: str | None = None
    cache_dir: str | None = None
    return_files: bool = False


class ExperimentRunResponse(BaseModel):
    exit_code: int
    ok: bool
    tag: str | None = None
    config_hash: str | None = None
    out_dir: str | None = None
    files: list[str] = Field(default_factory=list)
    summary: dict = Field(default_factory=dict)
    file_contents: dict[str, str] | None = None


class ConsolidateRequest(BaseModel):
    """``summary_paths`` are read on the service host; texts travel inline."""

    summary_paths: list[str] = Field(default_factory=list)
    summary_texts: list[str] = Field(default_factory=list)
    out_dir: str
    return_files: bool = False


class ConsolidateResponse(BaseModel):
    files: list[str]
    body: dict
    file_contents: dict[str, str] | None = None


class ErrorBody(BaseModel):
    """Uniform error payload; exit_code follows the process protocol."""

    error: str
    error_kind: str
    exit_code: int
