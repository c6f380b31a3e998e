"""Experiment configuration: parsing, validation, canonical serialization.

Configs are sectioned key-value text (INI) or the equivalent JSON
object. The canonical writer emits a fixed section and key order with
repr-exact numbers, so a config hashes and round-trips losslessly.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

from .errors import InvalidParameterError

__all__ = [
    "GENERATORS",
    "KERNEL_KINDS",
    "EXPERIMENT_TAGS",
    "GraphSpec",
    "KernelSpec",
    "ExperimentConfig",
    "parse_config",
    "parse_config_text",
    "canonical_text",
    "config_hash",
    "nominal_dw",
]

GENERATORS = ("lattice", "gasket", "vicsek")
KERNEL_KINDS = ("nearest-neighbor", "direct", "subordinated")
EXPERIMENT_TAGS = ("volume", "identities", "hkp", "csj", "nash", "exit", "davies")

_DW = {
    "lattice": 2.0,
    "gasket": math.log(5.0) / math.log(2.0),
    "vicsek": math.log(15.0) / math.log(3.0),
}


def nominal_dw(generator: str) -> float:
    try:
        return _DW[generator]
    except KeyError:
        raise InvalidParameterError(f"unknown generator {generator!r}") from None


@dataclass
class GraphSpec:
    generator: str
    params: dict[str, int]

    def validate(self) -> None:
        if self.generator not in GENERATORS:
            raise InvalidParameterError(
                f"generator must be one of {GENERATORS}, got {self.generator!r}"
            )
        needed = {"lattice": ("dimension", "side"), "gasket": ("level",), "vicsek": ("level",)}
        for key in needed[self.generator]:
            if key not in self.params:
                raise InvalidParameterError(
                    f"graph generator {self.generator!r} needs parameter {key!r}"
                )
        extra = set(self.params) - set(needed[self.generator])
        if extra:
            raise InvalidParameterError(
                f"unknown graph parameters for {self.generator!r}: {sorted(extra)}"
            )


@dataclass
class KernelSpec:
    kind: str
    beta: float | None = None
    laziness: float = 0.0
    n_terms: int | None = None
    perturb_seed: int | None = None
    perturb_amplitude: float | None = None

    def validate(self) -> None:
        if self.kind not in KERNEL_KINDS:
            raise InvalidParameterError(
                f"kernel kind must be one of {KERNEL_KINDS}, got {self.kind!r}"
            )
        if self.kind == "nearest-neighbor":
            if self.beta is not None:
                raise InvalidParameterError(
                    "nearest-neighbor kernels take no beta (the walk is diffusive)"
                )
        else:
            if self.beta is None:
                raise InvalidParameterError(f"kernel kind {self.kind!r} needs beta")
            if self.beta <= 0:
                raise InvalidParameterError(f"beta must be positive, got {self.beta}")
        if not 0.0 <= self.laziness < 1.0:
            raise InvalidParameterError(f"laziness must be in [0, 1), got {self.laziness}")
        if self.kind == "subordinated" and self.n_terms is not None and self.n_terms < 1:
            raise InvalidParameterError(f"n_terms must be >= 1, got {self.n_terms}")
        if (self.perturb_seed is None) != (self.perturb_amplitude is None):
            raise InvalidParameterError(
                "perturbation needs both perturb_seed and perturb_amplitude"
            )
        if self.perturb_amplitude is not None and not 1.0 <= self.perturb_amplitude <= 4.0:
            raise InvalidParameterError(
                f"perturb_amplitude must be in [1, 4], got {self.perturb_amplitude}"
            )


@dataclass
class ExperimentConfig:
    graph: GraphSpec
    kernel: KernelSpec
    tag: str
    seed: int = 0
    out_dir: str = "reports"
    grids: dict[str, list[float]] = field(default_factory=dict)
    tolerances: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        self.graph.validate()
        self.kernel.validate()
        if self.tag not in EXPERIMENT_TAGS:
            raise InvalidParameterError(
                f"experiment tag must be one of {EXPERIMENT_TAGS}, got {self.tag!r}"
            )
        beta = self.kernel.beta
        dw = nominal_dw(self.graph.generator)
        if self.tag in ("hkp", "exit"):
            if beta is None:
                raise InvalidParameterError(f"tag {self.tag!r} needs a kernel beta")
            if not (0.0 < beta < 2.0 or 2.0 <= beta < dw):
                raise InvalidParameterError(
                    f"beta={beta} is outside both validity windows for {self.tag!r}: "
                    f"the polynomial-envelope window [2, d_w) = [2, {dw:.4f}) and "
                    f"the strong-recurrence window (0, 2)"
                )
        if self.tag in ("csj", "davies"):
            if beta is None:
                raise InvalidParameterError(f"tag {self.tag!r} needs a kernel beta")
            if not 2.0 <= beta < dw:
                raise InvalidParameterError(
                    f"beta={beta} is outside the validity window [2, d_w) = "
                    f"[2, {dw:.4f}) for {self.tag!r}"
                )
        if self.kernel.kind == "subordinated" and beta is not None and not 0.0 < beta < dw:
            raise InvalidParameterError(
                f"subordination needs 0 < beta < d_w = {dw:.4f}, got {beta}"
            )
        if self.seed < 0:
            raise InvalidParameterError(f"seed must be >= 0, got {self.seed}")
        for key, vals in self.grids.items():
            if not vals:
                raise InvalidParameterError(f"grid {key!r} is empty")

    def grid(self, key: str, default: list[float]) -> list[float]:
        return list(self.grids.get(key, default))

    def int_grid(self, key: str, default: list[int]) -> list[int]:
        return [int(v) for v in self.grids.get(key, default)]

    def scalar(self, key: str, default: float) -> float:
        vals = self.grids.get(key)
        if vals is None:
            return default
        if len(vals) != 1:
            raise InvalidParameterError(f"grid {key!r} must hold a single value")
        return vals[0]

    def tolerance(self, key: str, default: float) -> float:
        return self.tolerances.get(key, default)


def _num(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise InvalidParameterError(f"expected a number, got {text!r}") from None


def _opt_int(value) -> int | None:
    return None if value is None else int(value)


def _opt_float(value) -> float | None:
    return None if value is None else float(value)


def _from_mapping(data: dict) -> ExperimentConfig:
    unknown = set(data) - {"graph", "kernel", "experiment", "grids", "tolerances"}
    if unknown:
        raise InvalidParameterError(f"unknown config sections: {sorted(unknown)}")
    for section in ("graph", "kernel", "experiment"):
        if section not in data:
            raise InvalidParameterError(f"config is missing the [{section}] section")
    gsec = dict(data["graph"])
    generator = str(gsec.pop("generator", "")).strip()
    params = {k: int(v) for k, v in gsec.items()}
    ksec = dict(data["kernel"])
    kernel = KernelSpec(
        kind=str(ksec.pop("kind", "")).strip(),
        beta=_opt_float(ksec.pop("beta", None)),
        laziness=float(ksec.pop("laziness", 0.0)),
        n_terms=_opt_int(ksec.pop("n_terms", None)),
        perturb_seed=_opt_int(ksec.pop("perturb_seed", None)),
        perturb_amplitude=_opt_float(ksec.pop("perturb_amplitude", None)),
    )
    if ksec:
        raise InvalidParameterError(f"unknown kernel keys: {sorted(ksec)}")
    esec = dict(data["experiment"])
    tag = str(esec.pop("tag", "")).strip()
    seed = int(esec.pop("seed", 0))
    out_dir = str(esec.pop("out_dir", "reports"))
    if esec:
        raise InvalidParameterError(f"unknown experiment keys: {sorted(esec)}")
    grids = {}
    for key, val in dict(data.get("grids", {})).items():
        if isinstance(val, (list, tuple)):
            grids[key] = [float(v) for v in val]
        else:
            grids[key] = [_num(tok) for tok in str(val).split()]
    tolerances = {k: float(v) for k, v in dict(data.get("tolerances", {})).items()}
    cfg = ExperimentConfig(
        graph=GraphSpec(generator=generator, params=params),
        kernel=kernel,
        tag=tag,
        seed=seed,
        out_dir=out_dir,
        grids=grids,
        tolerances=tolerances,
    )
    cfg.validate()
    return cfg


def parse_config_text(
    text: str,
    *,
    tag: str | None = None,
    seed: int | None = None,
) -> ExperimentConfig:
    """Parse INI or JSON config text (JSON when it starts with '{').

    `tag` and `seed` override the [experiment] section before
    validation, so one recipe file can drive several experiment kinds;
    with an override present the section itself becomes optional.
    """
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidParameterError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidParameterError("JSON config must be an object")
    else:
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise InvalidParameterError(f"config is not valid INI: {exc}") from None
        data = {name: dict(parser.items(name)) for name in parser.sections()}
    if tag is not None or seed is not None:
        esec = dict(data.get("experiment", {}))
        if tag is not None:
            esec["tag"] = tag
        if seed is not None:
            esec["seed"] = seed
        data["experiment"] = esec
    return _from_mapping(data)


def parse_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _fmt(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def canonical_text(cfg: ExperimentConfig) -> str:
    """Deterministic INI form: fixed section order, sorted keys, repr numbers."""
    out = io.StringIO()
    out.write("[graph]\n")
    out.write(f"generator = {cfg.graph.generator}\n")
    for key in sorted(cfg.graph.params):
        out.write(f"{key} = {cfg.graph.params[key]}\n")
    out.write("\n[kernel]\n")
    out.write(f"kind = {cfg.kernel.kind}\n")
    if cfg.kernel.beta is not None:
        out.write(f"beta = {_fmt(cfg.kernel.beta)}\n")
    out.write(f"laziness = {_fmt(cfg.kernel.laziness)}\n")
    if cfg.kernel.n_terms is not None:
        out.write(f"n_terms = {cfg.kernel.n_terms}\n")
    if cfg.kernel.perturb_seed is not None:
        out.write(f"perturb_seed = {cfg.kernel.perturb_seed}\n")
        out.write(f"perturb_amplitude = {_fmt(cfg.kernel.perturb_amplitude)}\n")
    out.write("\n[experiment]\n")
    out.write(f"tag = {cfg.tag}\n")
    out.write(f"seed = {cfg.seed}\n")
    out.write(f"out_dir = {cfg.out_dir}\n")
    if cfg.grids:
        out.write("\n[grids]\n")
        for key in sorted(cfg.grids):
            out.write(f"{key} = {' '.join(_fmt(v) for v in cfg.grids[key])}\n")
    if cfg.tolerances:
        out.write("\n[tolerances]\n")
        for key in sorted(cfg.tolerances):
            out.write(f"{key} = {repr(cfg.tolerances[key])}\n")
    return out.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:16]
