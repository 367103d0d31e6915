"""Run configuration: sectioned ``key = value`` text.

Sections and their keys::

    [run]        seed, out_dir
    [data]       train, val, test          (dataset files; or use [synth])
    [synth]      seed + SynthConfig fields
    [model]      variant, hidden, embed, attention, n_frequent, min_count,
                 review_steps, share_review, attribute_mode, guided,
                 mask_annotations, mask_attributes
    [train]      lr, weight_decay, lam, lam2, max_epochs, patience,
                 batch_size, max_len, init_range, early_stopping, predictor_lr
    [beam]       k, max_len, length_norm
    [ablate]     seeds, epochs, lambdas, measure_cider
    [gradcheck]  tolerance, variants + TinyConfig fields

Relative paths resolve against the directory holding the config file.
``none`` is the empty value for optional numbers; lists are comma separated.
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .corpus import SynthConfig
from .decode import BeamConfig
from .exceptions import ConfigError
from .trainer import TinyConfig, TrainConfig

SEED_ENV = "GUIDECAP_SEED"

MODEL_KEYS = ("variant", "hidden", "embed", "attention", "n_frequent", "min_count", "review_steps",
              "share_review", "attribute_mode", "guided", "mask_annotations", "mask_attributes")
TRAIN_KEYS = ("lr", "weight_decay", "lam", "lam2", "max_epochs", "patience", "batch_size", "max_len",
              "init_range", "early_stopping", "predictor_lr")
VARIANT_NAMES = {"soft": "soft", "soft-attention": "soft", "review": "review", "review-net": "review"}


@dataclass
class AblateConfig:
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    epochs: int = 10
    lambdas: Tuple[float, ...] = ()
    measure_cider: bool = True


@dataclass
class GradcheckConfig:
    tolerance: float = 1e-4
    variants: Tuple[str, ...] = ("soft", "review")
    tiny: TinyConfig = field(default_factory=TinyConfig)


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "run"
    train_path: Optional[str] = None
    val_path: Optional[str] = None
    test_path: Optional[str] = None
    synth: Optional[SynthConfig] = None
    synth_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    beam: BeamConfig = field(default_factory=BeamConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    base_dir: str = field(default=".", compare=False)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def path(self, p: Optional[str]) -> Optional[str]:
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))


# --- value codecs ------------------------------------------------------------------

def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt(conv):
    return lambda s: None if s.strip().lower() in ("", "none") else conv(s)


def _list(conv):
    return lambda s: tuple(conv(x.strip()) for x in s.split(",") if x.strip())


def _variant(s: str) -> str:
    try:
        return VARIANT_NAMES[s.strip()]
    except KeyError:
        raise ValueError(f"variant must be one of {sorted(VARIANT_NAMES)}") from None


_SCALAR = {"int": int, "float": float, "bool": _bool, "str": str,
           "Optional[int]": _opt(int), "Optional[float]": _opt(float)}


def _converter(cls, name):
    if name == "variant":
        return _variant
    ftype = {f.name: f.type for f in fields(cls)}[name]
    return _SCALAR[ftype if isinstance(ftype, str) else ftype.__name__]


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --- schema ------------------------------------------------------------------------

def _schema():
    """``section -> key -> (converter, target)``; targets are resolved by :func:`_assign`."""
    return {
        "run": {"seed": (int, "seed"), "out_dir": (str, "out_dir")},
        "data": {"train": (str, "train_path"), "val": (str, "val_path"), "test": (str, "test_path")},
        "synth": {"seed": (int, "synth_seed"),
                  **{f.name: (_converter(SynthConfig, f.name), "synth." + f.name) for f in fields(SynthConfig)}},
        "model": {k: (_converter(TrainConfig, k), "train." + k) for k in MODEL_KEYS},
        "train": {k: (_converter(TrainConfig, k), "train." + k) for k in TRAIN_KEYS},
        "beam": {f.name: (_converter(BeamConfig, f.name), "beam." + f.name) for f in fields(BeamConfig)},
        "ablate": {"seeds": (_list(int), "ablate.seeds"), "epochs": (int, "ablate.epochs"),
                   "lambdas": (_list(float), "ablate.lambdas"), "measure_cider": (_bool, "ablate.measure_cider")},
        "gradcheck": {"tolerance": (float, "gradcheck.tolerance"),
                      "variants": (_list(_variant), "gradcheck.variants"),
                      **{f.name: (_converter(TinyConfig, f.name), "gradcheck.tiny." + f.name)
                         for f in fields(TinyConfig)}},
    }


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    """Line number of each ``key`` inside each ``[section]``."""
    out, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
        elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, 1)[0].strip().lower()
            out.setdefault((section, key), i)
    return out


def parse_config(text: str, source: str = "<config>", base_dir: str = ".") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:1: key outside any [section]: {exc.line.strip()!r}") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0] if exc.errors else (0, "")
        raise ConfigError(f"{source}:{lineno}:1: cannot parse line {line}") from None
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", 0)
        raise ConfigError(f"{source}:{lineno}:1: {exc.message.splitlines()[0]}") from None
    lines = _line_index(text)
    schema = _schema()
    cfg = RunConfig(base_dir=base_dir)
    for section in parser.sections():
        if section not in schema:
            lineno = next((i for i, l in enumerate(text.splitlines(), 1) if l.strip() == f"[{section}]"), 0)
            raise ConfigError(f"{source}:{lineno}:1: unknown section [{section}] "
                              f"(known: {', '.join(schema)})")
        if section == "synth":
            cfg.synth = SynthConfig()
        for key, raw in parser.items(section):
            lineno = lines.get((section, key), 0)
            if key not in schema[section]:
                raise ConfigError(f"{source}:{lineno}:1: unknown key {key!r} in [{section}]")
            conv, target = schema[section][key]
            try:
                _assign(cfg, target, conv(raw))
            except (ValueError, KeyError) as exc:
                col = _value_column(text, lineno)
                raise ConfigError(f"{source}:{lineno}:{col}: bad value {raw!r} for {section}.{key}: {exc}") from None
    _validate(cfg, source)
    return cfg


def _value_column(text: str, lineno: int) -> int:
    if lineno < 1:
        return 1
    line = text.splitlines()[lineno - 1]
    m = re.search(r"[=:]\s*", line)
    return m.end() + 1 if m else 1


def _assign(cfg: RunConfig, target: str, value) -> None:
    *path, last = target.split(".")
    obj = cfg
    for p in path:
        obj = getattr(obj, p)
    if isinstance(obj, BeamConfig):
        setattr(obj, last, value)
        obj.__post_init__()
    else:
        setattr(obj, last, value)


def _validate(cfg: RunConfig, source: str) -> None:
    try:
        cfg.train.validate()
        if cfg.synth is not None:
            cfg.synth.validate()
        if len(cfg.ablate.seeds) < 1:
            raise ConfigError("ablate.seeds needs at least one seed")
        if cfg.ablate.epochs < 1:
            raise ConfigError("ablate.epochs must be >= 1")
        if cfg.gradcheck.tolerance <= 0:
            raise ConfigError("gradcheck.tolerance must be > 0")
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def apply_env(cfg: RunConfig, environ=None) -> RunConfig:
    """``GUIDECAP_SEED`` replaces ``run.seed``."""
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return cfg
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    return replace(cfg, seed=seed)


def load_config(path, environ=None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return apply_env(parse_config(text, str(path), str(p.parent)), environ)


def dump_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config` (up to comments and key order)."""
    out: List[str] = []

    def section(name, items):
        out.append(f"[{name}]")
        out.extend(f"{k} = {_fmt(v)}" for k, v in items)
        out.append("")

    section("run", [("seed", cfg.seed), ("out_dir", cfg.out_dir)])
    data = [(k, v) for k, v in (("train", cfg.train_path), ("val", cfg.val_path), ("test", cfg.test_path))
            if v is not None]
    if data:
        section("data", data)
    if cfg.synth is not None:
        section("synth", [("seed", cfg.synth_seed)] + [(f.name, getattr(cfg.synth, f.name)) for f in fields(SynthConfig)])
    section("model", [(k, getattr(cfg.train, k)) for k in MODEL_KEYS])
    section("train", [(k, getattr(cfg.train, k)) for k in TRAIN_KEYS])
    section("beam", [(f.name, getattr(cfg.beam, f.name)) for f in fields(BeamConfig)])
    section("ablate", [(f.name, getattr(cfg.ablate, f.name)) for f in fields(AblateConfig)])
    section("gradcheck", [("tolerance", cfg.gradcheck.tolerance), ("variants", cfg.gradcheck.variants)]
            + [(f.name, getattr(cfg.gradcheck.tiny, f.name)) for f in fields(TinyConfig)])
    return "\n".join(out)
