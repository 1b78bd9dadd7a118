"""Plain-text run configuration.

Sections map onto :class:`~diffuir.training.RunConfig` (and its ``data`` spec)::

    # comment
    [schedule]
    T = 50
    delta_bar_T = 0.9

    [data]
    task_weights = dehaze:0.4, lowlight:0.1, derain:0.2, desnow:0.2, deblur:0.1

A key may also be written fully qualified (``schedule.T = 50``) outside any
section.  Unknown sections or keys are rejected with their line number.
"""
from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path

from .degradations import DatasetSpec
from .errors import ConfigError, MissingFileError
from .training import RunConfig

# (section, key) -> RunConfig field, or "data.<field>" for the dataset spec
KEYS = {
    ("schedule", "T"): "T",
    ("schedule", "delta_bar_T"): "delta_bar_T",
    ("schedule", "beta_bar_T"): "beta_bar_T",
    ("schedule", "shape"): "schedule_shape",
    ("model", "base_width"): "base_width",
    ("model", "multipliers"): "multipliers",
    ("optim", "lr"): "lr",
    ("optim", "beta1"): "beta1",
    ("optim", "beta2"): "beta2",
    ("optim", "eps"): "adam_eps",
    ("train", "iterations"): "iterations",
    ("train", "batch_size"): "batch_size",
    ("train", "ablation_mode"): "ablation_mode",
    ("train", "seed"): "seed",
    ("train", "flips"): "flips",
    ("train", "dtype"): "dtype",
    ("train", "log_every"): "log_every",
    ("train", "eval_every"): "eval_every",
    ("train", "ckpt_every"): "ckpt_every",
    ("train", "out_dir"): "out_dir",
    ("train", "resume"): "resume",
    ("sampling", "steps"): "sampling_steps",
    ("sampling", "sampler"): "sampler",
    ("sampling", "eval_seed"): "eval_seed",
    ("data", "image_size"): "data.image_size",
    ("data", "samples_per_task"): "data.samples_per_task",
    ("data", "seed"): "data.seed",
    ("data", "task_weights"): "data.task_weights",
    ("data", "equalize_lowlight"): "data.equalize_lowlight",
}


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_weights(s):
    out = {}
    for part in s.split(","):
        task, _, w = part.partition(":")
        if not _:
            raise ValueError(f"expected task:weight, got {part.strip()!r}")
        out[task.strip()] = float(w)
    return out


def _convert(field_name, raw):
    if field_name.endswith("task_weights"):
        return _parse_weights(raw)
    if field_name == "multipliers":
        return tuple(int(x) for x in raw.replace(",", " ").split())
    default = _defaults()[field_name]
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip().strip('"')


def _defaults():
    cfg = RunConfig()
    d = {f.name: getattr(cfg, f.name) for f in fields(RunConfig) if f.name != "data"}
    d.update({f"data.{f.name}": getattr(cfg.data, f.name) for f in fields(DatasetSpec)})
    return d


def parse_assignments(items, source="<config>"):
    """``[(lineno, "section.key", "value"), ...]`` -> {field: value}."""
    values = {}
    for lineno, qualified, raw in items:
        section, _, key = qualified.partition(".")
        target = KEYS.get((section, key))
        if target is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {qualified!r}")
        try:
            values[target] = _convert(target, raw)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {qualified!r}: {e}") from None
    return values


def tokenize(text, source="<config>"):
    items = []
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in {s for s, _ in KEYS}:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            continue
        key, eq, raw = line.partition("=")
        if not eq:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if "." not in key:
            if section is None:
                raise ConfigError(f"{source}:{lineno}: key {key!r} outside any section")
            key = f"{section}.{key}"
        items.append((lineno, key, raw.strip()))
    return items


def build(values, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    data_kw = {k[5:]: v for k, v in values.items() if k.startswith("data.")}
    top_kw = {k: v for k, v in values.items() if not k.startswith("data.")}
    data = replace(base.data, **data_kw) if data_kw else base.data
    return replace(base, data=data, **top_kw)


def parse_config(text, source="<config>", overrides=(), base: RunConfig | None = None) -> RunConfig:
    """Parse a config document; ``overrides`` are extra ``section.key=value`` strings.

    Keys not mentioned keep their value from ``base`` (library defaults if None).
    """
    items = tokenize(text, source)
    for i, ov in enumerate(overrides, 1):
        key, eq, raw = ov.partition("=")
        if not eq:
            raise ConfigError(f"--set #{i}: expected section.key=value, got {ov!r}")
        items.append((f"--set#{i}", key.strip(), raw.strip()))
    return build(parse_assignments(items, source), base)


def load_config(path=None, overrides=(), base: RunConfig | None = None) -> RunConfig:
    if path is None:
        return parse_config("", overrides=overrides, base=base)
    p = Path(path)
    if not p.exists():
        raise MissingFileError(f"no such config file: {p}")
    return parse_config(p.read_text(), str(p), overrides, base)


def dump_config(cfg: RunConfig) -> str:
    """Render a config in the file format (round-trips through parse_config)."""
    lines, current = [], None
    for (section, key), target in KEYS.items():
        value = getattr(cfg.data, target[5:]) if target.startswith("data.") else getattr(cfg, target)
        if section != current:
            lines.append(f"\n[{section}]" if lines else f"[{section}]")
            current = section
        if target == "multipliers":
            value = ", ".join(str(m) for m in value)
        elif target.endswith("task_weights"):
            value = ", ".join(f"{t}:{w!r}" for t, w in value.items())
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def describe_defaults() -> str:
    cfg = RunConfig()
    out = []
    for (section, key), target in KEYS.items():
        value = getattr(cfg.data, target[5:]) if target.startswith("data.") else getattr(cfg, target)
        out.append(f"  {section}.{key} = {value}")
    return "\n".join(out)
