"""Run configuration: one schema drives JSON validation, argparse flags and the manifest echo."""
import argparse
import json
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from Denoiser.tiny_denoiser import DenoiserConfig
from Denoiser.trainer import TrainConfig
from Guidance.guidance import GuidanceParams
from Optimizer.fragment_optimizer import LeadConstraints, OptimizerConfig, OptimizerMode
from Optimizer.property_oracle import ORACLES
from Sampler.sampler import SamplerParams

COMMANDS = ("train", "generate", "optimize", "eval", "selftest")
TASKS = ("denovo", "linker", "motif_extension", "scaffold_decoration", "superstructure", "hit", "lead")

# (type, key, options, default); "header"/"end" only group entries
CONFIG_SCHEMA = [
    ("header", "Run", {}, None),
    ("string", "corpus", {"hint": "newline-delimited training or seed sequences"}, "data/toy_corpus.txt"),
    ("string", "checkpoint", {"hint": "denoiser checkpoint to write (train) or read"}, "runs/denoiser.ckpt"),
    ("string", "oracle_corpus", {"hint": "sample from the exact corpus posterior instead of a checkpoint"}, ""),
    ("string", "out_dir", {}, "runs/latest"),
    ("int", "seed", {"min": 0}, 0),
    ("int", "workers", {"min": 1, "max": 64}, 4),
    ("bool", "plot", {}, False),
    ("bool", "verbose", {}, False),
    ("bool", "silent", {}, False),
    ("end", "Run", {}, None),

    ("header", "Training", {}, None),
    ("int", "steps", {"min": 1}, 2000),
    ("int", "batch", {"min": 1, "max": 4096}, 16),
    ("float", "lr", {"min": 1e-6, "max": 1.0}, 3e-3),
    ("float", "weight_decay", {"min": 0.0, "max": 1.0}, 0.01),
    ("int", "safe_views", {"min": 0, "max": 64, "hint": "0 trains on the corpus as written"}, 0),
    ("float", "shift", {"min": 0.0, "max": 1.0, "hint": "fraction of rows moved to a random offset"}, 0.0),
    ("dropdown", "schedule", {"items": ["loglinear", "cosine"]}, "loglinear"),
    ("int", "max_len", {"min": 1, "max": 512}, 64),
    ("int", "d_model", {"min": 2, "max": 512}, 32),
    ("end", "Training", {}, None),

    ("header", "Task", {}, None),
    ("dropdown", "task", {"items": list(TASKS)}, "denovo"),
    ("int", "n_samples", {"min": 1}, 100),
    ("string", "fragments", {"hint": "'.'-separated input fragments for constrained tasks"}, ""),
    ("int", "mask_length", {"min": 0, "max": 512, "hint": "0 samples from the fragment length model"}, 0),
    ("string", "molecules", {"hint": "results or sequence file to evaluate"}, ""),
    ("string", "reference", {"hint": "reference molecule for the distance metric"}, ""),
    ("end", "Task", {}, None),

    ("header", "Sampler", {}, None),
    ("dropdown", "sampler", {"items": ["confidence", "standard"]}, "confidence"),
    ("int", "N", {"min": 1, "max": 512}, 1),
    ("float", "tau", {"min": 1e-6}, 1.2),
    ("float", "r", {"min": 0.0}, 2.0),
    ("int", "standard_steps", {"min": 1}, 64),
    ("end", "Sampler", {}, None),

    ("header", "Guidance", {}, None),
    ("float", "mcg_w", {"min": 0.0}, 2.0),
    ("float", "mcg_gamma", {"min": 0.0, "max": 1.0}, 0.0),
    ("int", "mcg_seed", {"min": 0}, 0),
    ("end", "Guidance", {}, None),

    ("header", "Optimizer", {}, None),
    ("dropdown", "oracle", {"items": sorted(ORACLES)}, "composition"),
    ("int", "budget", {"min": 1}, 1000),
    ("int", "V", {"min": 1}, 100),
    ("int", "G", {"min": 1}, 1000),
    ("int", "warmup", {"min": -1, "hint": "-1 uses a tenth of G"}, -1),
    ("int", "iterations", {"min": 1}, 1),
    ("int", "max_attempts", {"min": 0, "hint": "0 allows ten attempts per generation"}, 0),
    ("dropdown", "mode", {"items": [mode.value for mode in OptimizerMode]}, OptimizerMode.FRAGMENT_REMASK.value),
    ("int", "vocab_max_attachments", {"min": 0, "hint": "0 admits any number"}, 1),
    ("string", "seed_molecule", {"hint": "starting molecule for lead optimization"}, ""),
    ("float", "delta", {"min": 0.0, "max": 1.0}, 0.4),
    ("float", "qed_min", {"min": 0.0, "max": 1.0}, 0.0),
    ("float", "sa_max", {"min": 1.0, "max": 10.0}, 10.0),
    ("end", "Optimizer", {}, None),
]

FIELD_TYPES = ("bool", "int", "float", "string", "dropdown")


class ConfigError(ValueError):
    pass


def schema_fields(schema=CONFIG_SCHEMA) -> Iterator[Tuple[str, str, dict, object]]:
    for entry in schema:
        if entry[0] in FIELD_TYPES:
            yield entry


def defaults(schema=CONFIG_SCHEMA) -> Dict[str, object]:
    return {key: default for _, key, _, default in schema_fields(schema)}


def coerce(kind: str, key: str, options: dict, value):
    match kind:
        case "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
                return value.lower() in ("true", "1")
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        case "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
            try:
                value = int(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
        case "float":
            if isinstance(value, bool):
                raise ConfigError(f"{key}: expected a number, got {value!r}")
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: expected a number, got {value!r}")
        case "string":
            if not isinstance(value, str):
                raise ConfigError(f"{key}: expected a string, got {value!r}")
            return value
        case "dropdown":
            if value not in options["items"]:
                raise ConfigError(f"{key}: {value!r} is not one of {options['items']}")
            return value
        case _:
            raise ConfigError(f"{key}: unknown schema type {kind!r}")

    if "min" in options and value < options["min"]:
        raise ConfigError(f"{key}={value} is below the minimum {options['min']}")
    if "max" in options and value > options["max"]:
        raise ConfigError(f"{key}={value} is above the maximum {options['max']}")
    return value


class RunConfig:
    """Validated flat key-value run configuration with builders for the component configs."""

    def __init__(self, values: Optional[Mapping[str, object]] = None, schema=CONFIG_SCHEMA):
        self.schema = schema
        fields = {key: (kind, options) for kind, key, options, _ in schema_fields(schema)}
        unknown = sorted(set(values or {}) - set(fields))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        merged = defaults(schema)
        merged.update(values or {})
        self.values = {key: coerce(fields[key][0], key, fields[key][1], value) for key, value in merged.items()}
        self._check_combinations()

    def __getattr__(self, key):
        values = self.__dict__.get("values", {})
        if key in values:
            return values[key]
        raise AttributeError(key)

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> Dict[str, object]:
        return dict(self.values)

    def _check_combinations(self):
        mode = OptimizerMode(self.mode)
        if mode is OptimizerMode.GPT_STYLE_REMASK_EXCLUDED:
            raise ConfigError("mode gpt_style_remask_excluded is not supported")
        if mode is OptimizerMode.FRAGMENT_REMASK_MCG and (self.mcg_gamma <= 0 or self.mcg_w == 1.0):
            raise ConfigError("mode fragment_remask_mcg needs mcg_gamma > 0 and mcg_w != 1")
        if self.warmup > self.G:
            raise ConfigError(f"warmup={self.warmup} exceeds G={self.G}")
        if self.G % self.iterations:
            raise ConfigError(f"G={self.G} does not split into {self.iterations} iterations")
        if self.d_model % 2:
            raise ConfigError(f"d_model={self.d_model} must be even")

    # component configs

    def sampler_params(self) -> SamplerParams:
        return SamplerParams(N=self.N, tau=self.tau, r=self.r, seed=self.seed)

    def guidance_params(self) -> GuidanceParams:
        return GuidanceParams(w=self.mcg_w, gamma=self.mcg_gamma, seed=self.mcg_seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(steps=self.steps, batch=self.batch, lr=self.lr, seed=self.seed,
                           weight_decay=self.weight_decay, shift=self.shift)

    def model_config(self, K: int) -> DenoiserConfig:
        return DenoiserConfig(K=K, max_len=self.max_len, d=self.d_model, ffn=2 * self.d_model)

    def lead_constraints(self) -> Optional[LeadConstraints]:
        if self.task != "lead":
            return None
        return LeadConstraints(delta=self.delta, qed_min=self.qed_min or None,
                               sa_max=self.sa_max if self.sa_max < 10.0 else None)

    def optimizer_config(self) -> OptimizerConfig:
        try:
            return OptimizerConfig(V=self.V, G=self.G, warmup=self.warmup, mode=OptimizerMode(self.mode),
                                   sampler=self.sampler_params(), guidance=self.guidance_params(),
                                   vocab_max_attachments=self.vocab_max_attachments or None,
                                   lead=self.lead_constraints(), iterations=self.iterations, seed=self.seed,
                                   max_attempts=self.max_attempts or None)
        except ValueError as e:
            raise ConfigError(str(e))


def load_config_file(path) -> Dict[str, object]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")


def add_schema_flags(parser: argparse.ArgumentParser, schema=CONFIG_SCHEMA):
    """One flag per schema field; flags left unset stay out of the namespace so file values survive."""
    group = parser
    for kind, key, options, default in schema:
        if kind == "header":
            group = parser.add_argument_group(key)
            continue
        if kind == "end":
            group = parser
            continue
        help_text = options.get("hint", "") + f" (default: {default})"
        if kind == "bool":
            group.add_argument(flag_name(key), dest=key, action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS, help=help_text)
        elif kind == "dropdown":
            group.add_argument(flag_name(key), dest=key, choices=options["items"], default=argparse.SUPPRESS,
                               help=help_text)
        else:
            group.add_argument(flag_name(key), dest=key, default=argparse.SUPPRESS, help=help_text)


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fragdiff", description="Fragment-masked discrete diffusion toolkit")
    commands = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = commands.add_parser(command)
        sub.add_argument("--config", default=None, help="JSON config file; flags override it")
        add_schema_flags(sub)
    return parser


def resolve(file_values: Optional[Mapping[str, object]] = None,
            flag_values: Optional[Mapping[str, object]] = None) -> RunConfig:
    """Schema defaults < config file < flags."""
    merged: Dict[str, object] = {}
    merged.update(file_values or {})
    merged.update(flag_values or {})
    return RunConfig(merged)


def parse_args(argv: Optional[Sequence[str]] = None) -> Tuple[str, RunConfig]:
    args = vars(build_arg_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    file_values = load_config_file(config_path) if config_path else {}
    return command, resolve(file_values, args)


def schema_rows(schema=CONFIG_SCHEMA) -> List[dict]:
    return [{"type": kind, "key": key, "options": options, "default": default}
            for kind, key, options, default in schema_fields(schema)]
