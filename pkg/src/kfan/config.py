"""Run configuration files.

Grammar: one ``key = value`` per line, ``#`` starts a comment, and
``[branch.NAME]`` opens a section describing one branch. Keys before the
first section are global. Lists are comma separated (``hidden = 400, 200``).
Every key must be known; duplicates and type errors are reported with line
numbers.
"""

from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .data import MultiviewSynthConfig, NoiseConfig
from .errors import ConfigError
from .finetune import FineTuneConfig
from .network import JointTrainConfig
from .optim import LbfgsConfig
from .rbm import TrainConfig

TASKS = {"restore-label": "restore_label", "restore_label": "restore_label",
         "multiview": "multiview"}
DATASETS = ("idx", "multiview", "multiview-synth")


def _int(text):
    return int(text, 10)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(conv):
    def parse(text):
        items = [t.strip() for t in text.split(",")]
        if not items or any(not t for t in items):
            raise ValueError(f"malformed list {text!r}")
        return tuple(conv(t) for t in items)
    return parse


def _task(text):
    if text not in TASKS:
        raise ValueError(f"task must be one of {sorted(TASKS)}")
    return TASKS[text]


def _dataset(text):
    if text not in DATASETS:
        raise ValueError(f"dataset must be one of {DATASETS}")
    return text


def _seed(text):
    value = int(text, 10)
    if not 0 <= value < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return value


# config key -> (RunConfig attribute, parser)
GLOBAL_KEYS = {
    "task": ("task", _task),
    "seed": ("seed", _seed),
    "dataset": ("dataset", _dataset),
    "train_images": ("train_images", str),
    "train_labels": ("train_labels", str),
    "test_images": ("test_images", str),
    "test_labels": ("test_labels", str),
    "multiview_file": ("multiview_file", str),
    "n_train": ("n_train", _int),
    "n_test": ("n_test", _int),
    "binarize": ("binarize", float),
    "copies": ("copies", _int),
    "folds": ("folds", _int),
    "fold": ("fold", _int),
    "shared": ("shared_dim", _int),
    # layer-wise and joint CD
    "eta": ("learning_rate", float),
    "cd_steps": ("cd_steps", _int),
    "epochs": ("epochs", _int),
    "batch_size": ("batch_size", _int),
    "init_stddev": ("weight_init_stddev", float),
    "momentum": ("momentum", float),
    "weight_decay": ("weight_decay", float),
    "joint_epochs": ("joint_epochs", _int),
    "mf_sweeps": ("mf_sweeps", _int),
    "mf_tolerance": ("mf_tolerance", float),
    "mf_damping": ("mf_damping", float),
    # fine-tuning
    "lambda": ("lam", float),
    "epsilon_clamp": ("epsilon_clamp", float),
    "max_iterations": ("max_iterations", _int),
    "lbfgs_memory": ("lbfgs_memory", _int),
    "grad_tolerance": ("grad_tolerance", float),
    "wolfe_c1": ("wolfe_c1", float),
    "wolfe_c2": ("wolfe_c2", float),
    "max_line_search_steps": ("max_line_search_steps", _int),
    # stroke noise
    "strokes": ("num_strokes", _int),
    "thickness": ("thickness_range", _list(float)),
    "control_points": ("control_points", _int),
    "coverage": ("coverage_range", _list(float)),
    "max_retries": ("max_retries", _int),
    # planted multiview data
    "synth_n": ("synth_n", _int),
    "synth_features": ("synth_features", _int),
    "synth_views": ("synth_views", _int),
    "synth_classes": ("synth_classes", _int),
    "synth_weights": ("synth_weights", _list(float)),
    "synth_ambiguity": ("synth_ambiguity", float),
    "synth_noise": ("synth_noise", float),
    # outputs
    "figures": ("figures", _bool),
}
BRANCH_KEYS = {
    "visible": ("visible", _int),
    "hidden": ("hidden", _list(_int)),
}
REQUIRED = ("task", "dataset", "shared")


@dataclass(frozen=True)
class BranchConfig:
    name: str
    hidden: tuple
    visible: int = None


@dataclass(frozen=True)
class RunConfig:
    task: str
    dataset: str
    shared_dim: int
    branches: tuple
    seed: int = 0
    train_images: str = None
    train_labels: str = None
    test_images: str = None
    test_labels: str = None
    multiview_file: str = None
    n_train: int = None
    n_test: int = None
    binarize: float = 0.5
    copies: int = 1
    folds: int = 10
    fold: int = 0
    learning_rate: float = 0.1
    cd_steps: int = 1
    epochs: int = 10
    batch_size: int = 20
    weight_init_stddev: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0
    joint_epochs: int = 1
    mf_sweeps: int = 10
    mf_tolerance: float = 1e-4
    mf_damping: float = 0.0
    lam: float = 1.0
    epsilon_clamp: float = 1e-7
    max_iterations: int = 200
    lbfgs_memory: int = 10
    grad_tolerance: float = 1e-5
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_steps: int = 20
    num_strokes: int = 2
    thickness_range: tuple = (3.0, 5.0)
    control_points: int = 3
    coverage_range: tuple = (0.3, 0.6)
    max_retries: int = 50
    synth_n: int = 1000
    synth_features: int = 64
    synth_views: int = 6
    synth_classes: int = 3
    synth_weights: tuple = (1295.0, 3354.0, 58.0)
    synth_ambiguity: float = 1.0
    synth_noise: float = 0.1
    figures: bool = True
    source: str = field(default="<string>", compare=False)

    def train_config(self):
        return TrainConfig(self.learning_rate, self.cd_steps, self.epochs, self.batch_size,
                           self.weight_init_stddev, self.seed, self.momentum, self.weight_decay)

    def joint_config(self):
        return JointTrainConfig(self.learning_rate, self.cd_steps, self.joint_epochs,
                                self.batch_size, self.weight_init_stddev, self.seed,
                                self.momentum, self.weight_decay,
                                self.mf_sweeps, self.mf_tolerance, self.mf_damping)

    def finetune_config(self):
        return FineTuneConfig(self.lam, self.task, self.epsilon_clamp, self.max_iterations)

    def lbfgs_config(self):
        return LbfgsConfig(self.lbfgs_memory, self.max_iterations, self.grad_tolerance,
                           self.wolfe_c1, self.wolfe_c2, self.max_line_search_steps)

    def noise_config(self):
        return NoiseConfig(self.num_strokes, tuple(self.thickness_range), self.control_points,
                           tuple(self.coverage_range), self.max_retries, self.seed)

    def synth_config(self):
        return MultiviewSynthConfig(self.synth_n, self.synth_features, self.synth_views,
                                    self.synth_classes, tuple(self.synth_weights),
                                    self.synth_ambiguity, self.synth_noise)

    def with_overrides(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update({k: v for k, v in changes.items() if v is not None})
        if "task" in changes and changes["task"] is not None:
            values["task"] = _task(changes["task"])
        return _validated(RunConfig(**values))

    def to_text(self):
        """Canonical text with every key spelled out, parseable by :func:`parse_config`."""
        lines = []
        for key, (attr, _) in GLOBAL_KEYS.items():
            value = getattr(self, attr)
            if value is not None:
                lines.append(f"{key} = {_format(key, value)}")
        for b in self.branches:
            lines.append("")
            lines.append(f"[branch.{b.name}]")
            if b.visible is not None:
                lines.append(f"visible = {b.visible}")
            lines.append(f"hidden = {_format('hidden', b.hidden)}")
        return "\n".join(lines) + "\n"


def _format(key, value):
    if key == "task":
        return value.replace("_", "-")
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text, source="<string>"):
    """Parse and validate configuration text into a :class:`RunConfig`."""
    values = {}
    seen = {}  # (section, key) -> line
    branches = {}  # name -> (header line, {key: value})
    order = []
    section = None
    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            name = line[1:-1].strip()
            if not name.startswith("branch.") or not name[7:].isidentifier():
                raise ConfigError(f"unknown section [{name}]", lineno)
            section = name[7:]
            if section in branches:
                raise ConfigError(
                    f"duplicate section [branch.{section}] (first on line {branches[section][0]})",
                    lineno)
            branches[section] = (lineno, {})
            order.append(section)
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        table = GLOBAL_KEYS if section is None else BRANCH_KEYS
        if key not in table:
            where = "global" if section is None else f"[branch.{section}]"
            raise ConfigError(f"unknown {where} key {key!r}", lineno)
        if (section, key) in seen:
            raise ConfigError(
                f"duplicate key {key!r} on lines {seen[(section, key)]} and {lineno}", lineno)
        seen[(section, key)] = lineno
        attr, conv = table[key]
        try:
            parsed = conv(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        if section is None:
            values[attr] = parsed
        else:
            branches[section][1][attr] = parsed

    eof = len(lines) + 1
    for key in REQUIRED:
        if GLOBAL_KEYS[key][0] not in values:
            raise ConfigError(f"missing required key {key!r} (end of input)", eof)
    specs = []
    for name in order:
        header, entries = branches[name]
        if "hidden" not in entries:
            raise ConfigError(f"[branch.{name}] lacks the required key 'hidden'", header)
        specs.append(BranchConfig(name, entries["hidden"], entries.get("visible")))
    try:
        cfg = RunConfig(branches=tuple(specs), source=source, **values)
        return _validated(cfg)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), eof) from None


def _validated(cfg):
    """Cross-field checks; building every sub-config runs its own validation."""
    try:
        cfg.train_config()
        cfg.joint_config()
        cfg.finetune_config()
        cfg.lbfgs_config()
        cfg.noise_config()
        if cfg.dataset == "multiview-synth":
            cfg.synth_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    names = [b.name for b in cfg.branches]
    if sorted(names) != ["x", "y", "z"]:
        raise ConfigError(f"both tasks need exactly the branches x, y, z; got {names}")
    if any(not b.hidden or min(b.hidden) < 1 for b in cfg.branches):
        raise ConfigError("hidden sizes must be positive")
    if cfg.shared_dim < 1:
        raise ConfigError("shared must be positive")
    if cfg.dataset == "idx" and cfg.task != "restore_label":
        raise ConfigError("idx image data feeds the restore-label task only")
    if cfg.dataset != "idx" and cfg.task != "multiview":
        raise ConfigError(f"dataset {cfg.dataset} feeds the multiview task only")
    if cfg.dataset == "idx" and not (cfg.train_images and cfg.train_labels):
        raise ConfigError("idx datasets need train_images and train_labels")
    if cfg.dataset == "multiview" and not cfg.multiview_file:
        raise ConfigError("multiview datasets need multiview_file")
    if cfg.dataset != "idx" and not 0 <= cfg.fold < cfg.folds:
        raise ConfigError("fold must lie in [0, folds)")
    if cfg.copies < 1:
        raise ConfigError("copies must be positive")
    if not 0 <= cfg.binarize < 1:
        raise ConfigError("binarize must lie in [0, 1); 0 disables it")
    return cfg


def bundled_configs():
    return sorted(p.name[:-4] for p in resources.files("kfan.configs").iterdir()
                  if p.name.endswith(".cfg"))


def load_config(name_or_path):
    """Read a config file, or a bundled config by name (e.g. ``mnist-small``)."""
    path = Path(name_or_path)
    if path.is_file():
        return parse_config(path.read_text(encoding="utf-8"), str(path))
    if name_or_path in bundled_configs():
        res = resources.files("kfan.configs").joinpath(f"{name_or_path}.cfg")
        return parse_config(res.read_text(encoding="utf-8"), name_or_path)
    raise FileNotFoundError(
        f"no config file {name_or_path!r}; bundled configs: {', '.join(bundled_configs())}")
