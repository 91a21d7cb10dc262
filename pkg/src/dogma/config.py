"""Declarative pipeline configuration: one strict JSON file.

Unknown keys are rejected everywhere (typo safety), relative paths are
resolved against the config file's directory, and unset per-stage seeds
inherit the global seed. A --seed override replaces the global seed and
every per-stage seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .downsample import DownsampleConfig
from .errors import ConfigError
from .features import FeatureConfig
from .qc import QcConfig
from .synth import SynthConfig
from .topology import TopologyConfig
from .util import canonical_json, sha256_text

EVAL_TASKS = ("supervised", "zero_shot", "clustering", "cross_view")

INPUT_KEYS = ("matrix", "metadata", "cell_ontology", "gene_ontology",
              "phylogeny", "annotations")


@dataclass
class InputPaths:
    matrix: Path
    metadata: Path
    cell_ontology: Path
    gene_ontology: Path
    phylogeny: Path
    annotations: Path

    def validate_exist(self):
        for key in INPUT_KEYS:
            p = getattr(self, key)
            if not Path(p).exists():
                raise ConfigError(f"input file for '{key}' does not exist: {p}")


@dataclass
class EvalConfig:
    tasks: list
    seed: int = 0
    graph_dir: Path | None = None

    def __post_init__(self):
        for t in self.tasks:
            if t not in EVAL_TASKS:
                raise ConfigError(f"unknown eval task {t!r}; valid: {EVAL_TASKS}")


@dataclass
class PipelineConfig:
    output_dir: Path
    seed: int = 0
    inputs: InputPaths | None = None
    qc: QcConfig | None = None
    downsample: DownsampleConfig | None = None
    features: FeatureConfig | None = None
    topology: TopologyConfig | None = None
    eval: EvalConfig | None = None
    synth: SynthConfig | None = None

    def require(self, *sections):
        for s in sections:
            if getattr(self, s) is None:
                raise ConfigError(f"config section '{s}' is required for this command")


def _strict_build(name: str, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in section '{name}'")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section '{name}': {exc}") from None


_TOP_KEYS = {"inputs", "output_dir", "seed", "qc", "downsample", "features",
             "topology", "eval", "synth"}


def load_config(path, seed_override: int | None = None,
                out_override=None) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}")

    base = path.parent

    def respath(p):
        p = Path(p)
        return p if p.is_absolute() else (base / p)

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("'seed' must be an integer")
    if seed_override is not None:
        seed = seed_override

    def section_seed(data: dict, key: str):
        # per-stage seeds inherit the global seed; a CLI override wins
        if seed_override is not None or key not in data:
            data[key] = seed
        return data

    inputs = None
    if "inputs" in raw:
        data = raw["inputs"]
        if not isinstance(data, dict):
            raise ConfigError("section 'inputs' must be an object")
        unknown = sorted(set(data) - set(INPUT_KEYS))
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown} in section 'inputs'")
        missing = sorted(set(INPUT_KEYS) - set(data))
        if missing:
            raise ConfigError(f"section 'inputs' is missing {missing}")
        inputs = InputPaths(**{k: respath(data[k]) for k in INPUT_KEYS})

    if "output_dir" not in raw and out_override is None:
        raise ConfigError("'output_dir' is required (or pass --out)")
    output_dir = Path(out_override) if out_override is not None \
        else respath(raw["output_dir"])

    qc = _strict_build("qc", QcConfig, raw["qc"]) if "qc" in raw else None
    downsample = None
    if "downsample" in raw:
        downsample = _strict_build("downsample", DownsampleConfig,
                                   section_seed(dict(raw["downsample"]), "seed"))
    features = None
    if "features" in raw:
        features = _strict_build("features", FeatureConfig,
                                 section_seed(dict(raw["features"]), "pca_seed"))
    topology = _strict_build("topology", TopologyConfig, raw["topology"]) \
        if "topology" in raw else None
    synth = None
    if "synth" in raw:
        synth = _strict_build("synth", SynthConfig,
                              section_seed(dict(raw["synth"]), "seed"))
    eval_cfg = None
    if "eval" in raw:
        data = dict(raw["eval"])
        if "graph_dir" in data and data["graph_dir"] is not None:
            data["graph_dir"] = respath(data["graph_dir"])
        eval_cfg = _strict_build("eval", EvalConfig, section_seed(data, "seed"))

    return PipelineConfig(output_dir=output_dir, seed=seed, inputs=inputs,
                          qc=qc, downsample=downsample, features=features,
                          topology=topology, eval=eval_cfg, synth=synth)


def config_to_dict(cfg: PipelineConfig) -> dict:
    """Fully resolved, JSON-safe view of the config (manifest + hashing)."""
    def clean(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {k: clean(v) for k, v in dataclasses.asdict(obj).items()}
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, Path):
            return str(obj)
        if hasattr(obj, "value") and not isinstance(obj, (int, float)):
            return obj.value
        return obj

    return {
        "output_dir": str(cfg.output_dir),
        "seed": cfg.seed,
        "inputs": clean(cfg.inputs),
        "qc": clean(cfg.qc),
        "downsample": clean(cfg.downsample),
        "features": clean(cfg.features),
        "topology": clean(cfg.topology),
        "eval": clean(cfg.eval),
        "synth": clean(cfg.synth),
    }


def config_hash(cfg: PipelineConfig) -> str:
    return sha256_text(canonical_json(config_to_dict(cfg)))
