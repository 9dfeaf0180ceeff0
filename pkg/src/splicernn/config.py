"""Flat ``key = value`` run configuration for the ``train`` command.

Every key is typed and validated up front; all problems are reported in one
error. :func:`render` writes the fully resolved configuration back in the
same format, so an echoed config can be fed straight back in.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .model import INPUT_WIDTH, ConfigError, ModelConfig
from .trainer import TrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.replace("[", "").replace("]", "").split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p) for p in parts)


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "default", "none") else float(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


# key -> (parser, default, section, help)
KEYS = {
    "train_path": (str, None, "paths", "training dataset file (required)"),
    "test_path": (str, "", "paths", "optional test dataset, evaluated after training"),
    "out_dir": (str, None, "paths", "output directory (required)"),
    "seed": (int, 0, "run", "master seed; every component derives its own seed from it"),
    "cell_kind": (str, "lstm", "model", "lstm | gru | irnn"),
    "layer_sizes": (_int_list, (60, 30), "model", "hidden widths, e.g. 60,30"),
    "num_classes": (int, 3, "model", "3 (acceptor/nonsite/donor) or 2 (site/nonsite)"),
    "input_width": (int, INPUT_WIDTH, "model", f"fixed at {INPUT_WIDTH}; accepted so echoed configs re-load"),
    "window_length": (int, 60, "model", "window length w (even)"),
    "dropout_rate": (float, 0.0, "model", "inverted dropout on each recurrent layer's outputs"),
    "irnn_scale": (float, 1.0, "model", "scale s of the identity recurrent init for irnn"),
    "embedding": (str, "dense", "model", "dense (trainable 4x4) or onehot (frozen identity)"),
    "precision": (str, "float64", "model", "float64 or float32"),
    "epochs": (int, 30, "train", "number of epochs"),
    "batch_size": (int, 64, "train", "mini-batch size"),
    "optimizer": (str, "adam", "train", "adam | rmsprop | sgd"),
    "learning_rate": (_optional_float, None, "train", "step size; default per optimizer"),
    "beta1": (float, 0.9, "train", "Adam first-moment decay"),
    "beta2": (float, 0.999, "train", "Adam second-moment decay"),
    "epsilon": (float, 1e-8, "train", "Adam/RMSprop epsilon"),
    "rho": (float, 0.9, "train", "RMSprop decay"),
    "clip_norm": (float, 0.0, "train", "global gradient-norm clip, 0 disables"),
    "shuffle": (_bool, True, "train", "reshuffle the training set every epoch"),
    "workers": (int, 1, "train", "threads computing shard gradients (results do not depend on it)"),
    "shard_size": (int, 0, "train", "examples per gradient shard, 0 = whole batch"),
    "record_seconds": (_bool, True, "train", "write wall-clock seconds to metrics.csv (false writes 0)"),
}

_MODEL_KEYS = ("cell_kind", "layer_sizes", "num_classes", "window_length", "dropout_rate", "irnn_scale",
               "embedding", "precision")
_TRAIN_KEYS = ("epochs", "batch_size", "optimizer", "learning_rate", "beta1", "beta2", "epsilon", "rho",
               "clip_norm", "shuffle", "workers", "shard_size", "record_seconds")


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    train_path: Path
    test_path: Path | None
    out_dir: Path

    def resolved(self) -> dict:
        out = {"train_path": str(self.train_path), "test_path": str(self.test_path or ""),
               "out_dir": str(self.out_dir), "seed": self.train.seed, "input_width": INPUT_WIDTH}
        for key in _MODEL_KEYS:
            out[key] = getattr(self.model, key)
        for key in _TRAIN_KEYS:
            out[key] = getattr(self.train, key)
        out["learning_rate"] = self.train.lr
        return out


def parse_text(text: str, source: str = "config") -> tuple[dict[str, str], list[str]]:
    values: dict[str, str] = {}
    errors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            errors.append(f"{source}:{lineno}: expected key = value")
            continue
        values[key.strip()] = value.strip()
    return values, errors


def parse_overrides(items: list[str]) -> tuple[dict[str, str], list[str]]:
    values, errors = {}, []
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            errors.append(f"override {item!r}: expected key=value")
            continue
        values[key.strip()] = value.strip()
    return values, errors


def build(values: dict[str, str], check_paths: bool = True) -> RunConfig:
    """Validate raw string values and build a :class:`RunConfig`.

    Raises :class:`ConfigError` naming every offending key.
    """
    errors = []
    for key in sorted(set(values) - set(KEYS)):
        errors.append(f"unknown key {key!r}")
    typed = {}
    for key, (parse, default, _, _) in KEYS.items():
        if key in values:
            try:
                typed[key] = parse(values[key])
            except ValueError as exc:
                errors.append(f"{key}: {exc}")
                # keep validating the rest; the error above already fails the build
                typed[key] = default
        elif default is None and key in ("train_path", "out_dir"):
            errors.append(f"{key}: required")
        else:
            typed[key] = default
    if typed.get("input_width", INPUT_WIDTH) != INPUT_WIDTH:
        errors.append(f"input_width: must be {INPUT_WIDTH}, got {typed['input_width']}")
    model = train = None
    try:
        model = ModelConfig(seed=typed["seed"], **{k: typed[k] for k in _MODEL_KEYS})
    except ConfigError as exc:
        errors.extend(str(exc).split("; "))
    try:
        train = TrainConfig(seed=typed["seed"], **{k: typed[k] for k in _TRAIN_KEYS})
    except ValueError as exc:
        errors.extend(str(exc).split("; "))
    if check_paths:
        if typed.get("train_path") and not Path(typed["train_path"]).is_file():
            errors.append(f"train_path: no such file {typed['train_path']!r}")
        if typed.get("test_path") and not Path(typed["test_path"]).is_file():
            errors.append(f"test_path: no such file {typed['test_path']!r}")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return RunConfig(model, train, Path(typed["train_path"]),
                     Path(typed["test_path"]) if typed["test_path"] else None, Path(typed["out_dir"]))


def load(path, overrides: list[str] = (), check_paths: bool = True) -> RunConfig:
    values, errors = parse_text(Path(path).read_text(encoding="utf-8"), str(path))
    extra, more = parse_overrides(list(overrides))
    errors += more
    values.update(extra)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return build(values, check_paths)


def render(config: RunConfig) -> str:
    resolved = config.resolved()
    lines = ["# resolved configuration; every default made explicit"]
    for section in ("paths", "run", "model", "train"):
        lines.append(f"# [{section}]")
        for key, (_, _, sec, _) in KEYS.items():
            if sec == section:
                lines.append(f"{key} = {_fmt(resolved[key])}")
    return "\n".join(lines) + "\n"


def describe_keys() -> str:
    width = max(len(k) for k in KEYS)
    rows = []
    for key, (_, default, _, text) in KEYS.items():
        if key == "learning_rate":
            shown = "per optimizer"
        else:
            shown = "required" if default is None else _fmt(default) or '""'
        rows.append(f"  {key.ljust(width)}  {text} [{shown}]")
    return "config keys:\n" + "\n".join(rows)
