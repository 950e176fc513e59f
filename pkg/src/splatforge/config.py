"""Project configuration: one YAML file drives a whole run.

Unknown keys are rejected with the file line they appear on, and the
resolved configuration (every default made explicit) is written into
the run directory so results stay reproducible.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .losses import LossConfig
from .optimizer import DEFAULT_LRS
from .trainer import TrainConfig

GUIDANCE_MODES = ("local", "remote", "none")

TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"prompt", "seed", "loss"}
LOSS_KEYS = {f.name for f in dataclasses.fields(LossConfig)}
PROVIDER_KEYS = {"guidance", "endpoint", "deadline"}
VIEW_KEYS = {"azimuth", "elevation", "path"}
INPUT_KEYS = {"references", "depths", "masks", "heldout"}
TOP_KEYS = {"prompt", "seed", "output_dir", "init_points", "train", "loss", "providers", "inputs"}


class ConfigError(ValueError):
    """Configuration file failed validation; message carries file:line."""


@dataclass
class ViewFile:
    azimuth: float
    elevation: float
    path: str


@dataclass
class ProviderSettings:
    guidance: str = "local"
    endpoint: str = ""
    deadline: float = 10.0


@dataclass
class InputFiles:
    references: list = field(default_factory=list)  # ViewFile
    depths: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    heldout: ViewFile | None = None


@dataclass
class ProjectConfig:
    train: TrainConfig
    providers: ProviderSettings = field(default_factory=ProviderSettings)
    inputs: InputFiles = field(default_factory=InputFiles)
    output_dir: str = "run"
    init_points: int = 500

    def resolved(self) -> dict:
        """Every field explicit, ready for the run log."""
        train = dataclasses.asdict(self.train)
        loss = train.pop("loss")
        for key in ("resolutions", "ramp_fractions", "background", "azimuth_range", "elevation_range"):
            train[key] = list(train[key])
        train["lrs"] = {k: float(v) for k, v in train["lrs"].items()}
        if train["fixed_views"] is not None:
            train["fixed_views"] = [list(v) for v in train["fixed_views"]]
        loss["scales"] = list(loss["scales"])
        loss["scale_weights"] = list(loss["scale_weights"])
        prompt = train.pop("prompt")
        seed = train.pop("seed")
        return {
            "prompt": prompt,
            "seed": seed,
            "output_dir": self.output_dir,
            "init_points": self.init_points,
            "train": train,
            "loss": loss,
            "providers": dataclasses.asdict(self.providers),
            "inputs": {
                "references": [dataclasses.asdict(v) for v in self.inputs.references],
                "depths": [dataclasses.asdict(v) for v in self.inputs.depths],
                "masks": [dataclasses.asdict(v) for v in self.inputs.masks],
                "heldout": dataclasses.asdict(self.inputs.heldout) if self.inputs.heldout else None,
            },
        }


def _key_lines(node, prefix=""):
    """Map dotted key paths to 1-based source lines."""
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for k_node, v_node in node.value:
            path = f"{prefix}.{k_node.value}" if prefix else str(k_node.value)
            lines[path] = k_node.start_mark.line + 1
            lines.update(_key_lines(v_node, path))
    elif isinstance(node, yaml.SequenceNode):
        for item in node.value:
            lines.update(_key_lines(item, f"{prefix}[]"))
    return lines


def _check_keys(found, allowed, section, lines, path, prefix):
    for key in found:
        if key not in allowed:
            dotted = f"{prefix}.{key}" if prefix else key
            line = lines.get(dotted, 1)
            raise ConfigError(f"{path}:{line}: unknown key {key!r} in {section}")


def _views(raw, section, lines, path):
    out = []
    for entry in raw or []:
        if not isinstance(entry, dict):
            raise ConfigError(f"{path}: entries under {section} must be mappings")
        _check_keys(entry, VIEW_KEYS, section, lines, path, f"inputs.{section}[]")
        if "path" not in entry or "azimuth" not in entry:
            line = lines.get(f"inputs.{section}", 1)
            raise ConfigError(f"{path}:{line}: {section} entries need azimuth and path")
        out.append(
            ViewFile(
                azimuth=float(entry["azimuth"]),
                elevation=float(entry.get("elevation", 0.0)),
                path=str(entry["path"]),
            )
        )
    return out


def load_project_config(path) -> ProjectConfig:
    path = str(path)
    with open(path) as f:
        text = f.read()
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: top level must be a mapping")
    lines = _key_lines(node) if node is not None else {}

    _check_keys(data, TOP_KEYS, "the top level", lines, path, "")
    train_raw = data.get("train") or {}
    loss_raw = data.get("loss") or {}
    providers_raw = data.get("providers") or {}
    inputs_raw = data.get("inputs") or {}
    for section, raw, allowed in (
        ("train", train_raw, TRAIN_KEYS),
        ("loss", loss_raw, LOSS_KEYS),
        ("providers", providers_raw, PROVIDER_KEYS),
        ("inputs", inputs_raw, INPUT_KEYS),
    ):
        if not isinstance(raw, dict):
            line = lines.get(section, 1)
            raise ConfigError(f"{path}:{line}: {section!r} must be a mapping")
        _check_keys(raw, allowed, f"{section!r}", lines, path, section)

    # normalize YAML lists into the tuples the dataclasses expect
    train_kwargs = dict(train_raw)
    for key in ("resolutions", "ramp_fractions", "background", "azimuth_range", "elevation_range"):
        if key in train_kwargs:
            train_kwargs[key] = tuple(train_kwargs[key])
    if train_kwargs.get("fixed_views") is not None:
        train_kwargs["fixed_views"] = tuple(tuple(v) for v in train_kwargs["fixed_views"])
    if "lrs" in train_kwargs:
        train_kwargs["lrs"] = {**DEFAULT_LRS, **train_kwargs["lrs"]}
    loss_kwargs = dict(loss_raw)
    for key in ("scales", "scale_weights"):
        if key in loss_kwargs:
            loss_kwargs[key] = tuple(loss_kwargs[key])

    try:
        loss = LossConfig(**loss_kwargs)
        train = TrainConfig(
            prompt=str(data.get("prompt", "")),
            seed=int(data.get("seed", 0)),
            loss=loss,
            **train_kwargs,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid configuration: {exc}") from exc

    mode = providers_raw.get("guidance", "local")
    if mode not in GUIDANCE_MODES:
        line = lines.get("providers.guidance", 1)
        raise ConfigError(
            f"{path}:{line}: guidance must be one of {', '.join(GUIDANCE_MODES)}"
        )
    providers = ProviderSettings(
        guidance=mode,
        endpoint=str(providers_raw.get("endpoint", "")),
        deadline=float(providers_raw.get("deadline", 10.0)),
    )
    if providers.guidance == "remote" and not providers.endpoint:
        line = lines.get("providers", 1)
        raise ConfigError(f"{path}:{line}: remote guidance needs an endpoint")

    heldout_raw = inputs_raw.get("heldout")
    heldout = None
    if heldout_raw is not None:
        _check_keys(heldout_raw, VIEW_KEYS, "'heldout'", lines, path, "inputs.heldout")
        if "path" not in heldout_raw or "azimuth" not in heldout_raw:
            line = lines.get("inputs.heldout", 1)
            raise ConfigError(f"{path}:{line}: heldout needs azimuth and path")
        heldout = ViewFile(
            azimuth=float(heldout_raw["azimuth"]),
            elevation=float(heldout_raw.get("elevation", 0.0)),
            path=str(heldout_raw["path"]),
        )
    inputs = InputFiles(
        references=_views(inputs_raw.get("references"), "references", lines, path),
        depths=_views(inputs_raw.get("depths"), "depths", lines, path),
        masks=_views(inputs_raw.get("masks"), "masks", lines, path),
        heldout=heldout,
    )

    init_points = int(data.get("init_points", 500))
    if init_points < 1:
        line = lines.get("init_points", 1)
        raise ConfigError(f"{path}:{line}: init_points must be >= 1")

    return ProjectConfig(
        train=train,
        providers=providers,
        inputs=inputs,
        output_dir=str(data.get("output_dir", "run")),
        init_points=init_points,
    )
