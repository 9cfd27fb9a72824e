"""Batch command-line front end: ``spikegrid {train,eval,analyze,encode,inspect}``.

Every command reads an optional INI-style config (``[section]`` headers,
``key = value`` lines), applies flag overrides, writes the fully resolved
config beside its outputs (``config.ini`` for training, ``<command>.ini``
otherwise) and then runs. Feeding that file back with
``--config`` repeats the run.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
``SPIKEGRID_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import io
import os
import sys
from typing import Optional

import numpy as np

from .analyze import activity_map, export_csv, gamma_map
from .data import Dataset, load_checkpoint, read_checkpoint, read_cifar_binary, read_event_csv, synth_split
from .encode import direct_encode, events_to_frames, poisson_encode
from .errors import ConfigError, SpikegridError
from .network import Network, NetworkSpec, count_parameters
from .neuron import LifParams
from .train import PRESETS, TrainConfig, dataset_preprocessor, evaluate, fit

# Where each preset's data comes from; paths still have to be supplied.
PRESET_DATA = {
    "cifar10": {"source": "cifar10"},
    "cifar100": {"source": "cifar100"},
    "cifar10-narrow": {"source": "cifar10"},
    "dvs-cifar10": {"source": "npz"},
    "tiny-synth": {"source": "synth"},
}

_DERIVED = {"network": {"lif", "seed"}, "train": {"seed", "checkpoint_dir"}}


def _fields(cls, section):
    return {f.name: str(f.type) for f in dataclasses.fields(cls) if f.name not in _DERIVED.get(section, ())}


SCHEMA = {
    "run": {"seed": "int", "out": "str"},
    "network": _fields(NetworkSpec, "network"),
    "neuron": _fields(LifParams, "neuron"),
    "train": _fields(TrainConfig, "train"),
    "data": {"source": "str", "train_path": "Optional[str]", "eval_path": "Optional[str]", "classes": "int",
             "train_per_class": "int", "eval_per_class": "int", "size": "int", "noise": "float"},
    "eval": {"checkpoint": "str", "timesteps": "Optional[int]", "split": "str", "batch": "int"},
    "analyze": {"checkpoint": "str", "timesteps": "Optional[int]", "split": "str", "batch": "int"},
    "encode": {"input": "str", "mode": "str", "timesteps": "int", "height": "int", "width": "int",
               "window": "str", "binarize": "bool", "duration": "Optional[int]"},
    "inspect": {"checkpoint": "str"},
}

DEFAULTS = {
    "run": {"seed": 0, "out": "spikegrid-out"},
    "data": {"source": "synth", "train_path": None, "eval_path": None, "classes": 10, "train_per_class": 100,
             "eval_per_class": 20, "size": 16, "noise": 0.3},
    "eval": {"timesteps": None, "split": "eval", "batch": 100},
    "analyze": {"timesteps": None, "split": "eval", "batch": 100},
    "encode": {"mode": "poisson", "timesteps": 10, "height": 128, "width": 128, "window": "duration",
               "binarize": False, "duration": None},
    "inspect": {},
}

SECTIONS = {
    "train": ("run", "network", "neuron", "train", "data"),
    "eval": ("run", "data", "eval"),
    "analyze": ("run", "data", "analyze"),
    "encode": ("run", "encode"),
    "inspect": ("run", "inspect"),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(section: str, key: str, text: str):
    kind = SCHEMA[section][key]
    text = text.strip()
    where = f"{section}.{key}"
    if kind.startswith("Optional["):
        if text.lower() in ("", "none"):
            return None
        kind = kind[len("Optional["):-1]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "tuple":
            return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return text


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_config(path) -> dict:
    """Parse a config file into ``{section: {key: value}}``; unknown keys are errors."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out: dict = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, text in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {section}.{key}")
            out.setdefault(section, {})[key] = _convert(section, key, text)
    return out


def write_config(config: dict, path) -> None:
    buf = io.StringIO()
    for section, values in config.items():
        buf.write(f"[{section}]\n")
        for key, value in values.items():
            buf.write(f"{key} = {_render(value)}\n")
        buf.write("\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def _override(config: dict, assignment: str) -> None:
    lhs, sep, rhs = assignment.partition("=")
    section, dot, key = lhs.strip().partition(".")
    if not sep or not dot:
        raise ConfigError(f"--set expects section.key=value, got {assignment!r}")
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {section}.{key}")
    config.setdefault(section, {})[key] = _convert(section, key, rhs)


def _find_config(checkpoint) -> Optional[str]:
    """The training run's ``config.ini`` beside or above a checkpoint."""
    here = os.path.dirname(os.path.abspath(checkpoint))
    for folder in (here, os.path.dirname(here)):
        candidate = os.path.join(folder, "config.ini")
        if os.path.exists(candidate):
            return candidate
    return None


def resolve(command: str, args) -> dict:
    """Defaults, then preset, then config file, then flags."""
    config_path = args.config
    if config_path is None and command in ("eval", "analyze") and getattr(args, "checkpoint", None):
        config_path = _find_config(args.checkpoint)
    given = read_config(config_path) if config_path else {}
    preset = getattr(args, "preset", None)
    resolved: dict = {}
    for section in SECTIONS[command]:
        if section == "network":
            values = NetworkSpec().to_dict()
            values.pop("lif")
            values.pop("seed")
        elif section == "neuron":
            values = dataclasses.asdict(LifParams())
        elif section == "train":
            values = {k: v for k, v in dataclasses.asdict(TrainConfig()).items() if k not in _DERIVED["train"]}
        else:
            values = dict(DEFAULTS.get(section, {}))
        if preset:
            net_over, train_over = PRESETS[preset]
            values.update({"network": net_over, "train": train_over,
                           "data": PRESET_DATA[preset]}.get(section, {}))
        values.update(given.get(section, {}))
        resolved[section] = values
    for assignment in getattr(args, "set", None) or []:
        _override(resolved, assignment)
    if args.seed is not None:
        resolved["run"]["seed"] = args.seed
    if args.out is not None:
        resolved["run"]["out"] = args.out
    for key in ("checkpoint", "input"):
        value = getattr(args, key, None)
        if value is not None:
            resolved[command][key] = value
    for key in ("timesteps", "mode", "split", "height", "width", "window", "duration"):
        value = getattr(args, key, None)
        if value is not None and key in SCHEMA[command]:
            resolved[command][key] = value
    if getattr(args, "binarize", False):
        resolved["encode"]["binarize"] = True
    for section in SECTIONS[command]:
        missing = set(SCHEMA[section]) - set(resolved[section])
        if missing:
            raise ConfigError(f"missing required key {section}.{sorted(missing)[0]}")
    return resolved


def _require_path(data: dict, key: str) -> str:
    path = data.get(key)
    if not path:
        raise ConfigError(f"missing dataset path: data.{key}")
    if not os.path.exists(path):
        raise ConfigError(f"dataset path data.{key} does not exist: {path}")
    return path


def _read_split(source: str, path: str) -> Dataset:
    if source in ("cifar10", "cifar100"):
        return read_cifar_binary(path, source)
    with np.load(path) as z:
        images, labels = z["images"], z["labels"]
        classes = int(z["classes"]) if "classes" in z else int(labels.max()) + 1
    return Dataset(np.asarray(images, dtype=float), labels, classes)


def load_data(data: dict, seed: int):
    """``(train, eval)`` datasets described by a ``[data]`` section."""
    source = data["source"]
    if source == "synth":
        size = data["size"]
        return synth_split(data["classes"], data["train_per_class"], data["eval_per_class"], (3, size, size),
                           data["noise"], seed)
    if source not in ("cifar10", "cifar100", "npz"):
        raise ConfigError(f"data.source must be synth, cifar10, cifar100 or npz, got {source!r}")
    train = _read_split(source, _require_path(data, "train_path"))
    ev = _read_split(source, _require_path(data, "eval_path"))
    return train, ev


def _prepare_out(config: dict, command: str) -> str:
    """Create the output directory and record the resolved config in it."""
    out = config["run"]["out"]
    os.makedirs(out, exist_ok=True)
    name = "config.ini" if command == "train" else f"{command}.ini"
    write_config(config, os.path.join(out, name))
    return out


# ----------------------------------------------------------------- commands

def cmd_train(config: dict) -> int:
    seed = config["run"]["seed"]
    train_set, eval_set = load_data(config["data"], seed)
    net_values = dict(config["network"])
    try:
        spec = NetworkSpec(lif=LifParams(**config["neuron"]), seed=seed, **net_values).validate()
        tc = TrainConfig(seed=seed, **config["train"])
    except (ValueError, SpikegridError) as exc:
        raise ConfigError(str(exc)) from None
    if spec.classes != train_set.classes:
        raise ConfigError(f"network.classes = {spec.classes} but the dataset has {train_set.classes} classes")
    out = _prepare_out(config, "train")
    tc.checkpoint_dir = os.path.join(out, "checkpoints")
    net = Network(spec)

    def log(s):
        print(f"epoch {s.epoch:3d}  lr {s.lr:.4g}  loss {s.train_loss:.4f}  "
              f"train {s.train_accuracy:.4f}  eval {s.eval_accuracy:.4f}", flush=True)

    report = fit(net, train_set, eval_set, tc, log=log)
    report.checkpoint = os.path.relpath(report.checkpoint, out)
    report.write_csv(os.path.join(out, "report.csv"))
    summary = report.summary()
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(summary)
    print(summary, end="")
    return 0


def _checkpoint_setup(config: dict, section: str):
    ckpt = config[section]["checkpoint"]
    if not os.path.exists(ckpt):
        raise ConfigError(f"{section}.checkpoint does not exist: {ckpt}")
    net, _ = load_checkpoint(ckpt)
    prep = dataset_preprocessor(ckpt)
    T = config[section]["timesteps"]
    if T is None:
        T = prep.T if prep is not None else net.spec.T_train
    if T < 1:
        raise ConfigError(f"{section}.timesteps must be >= 1")
    if net.spec.bn == "bntt" and T > net.spec.T_train:
        raise ConfigError(f"{section}.timesteps = {T} exceeds the stored T_train = {net.spec.T_train}; "
                          "per-timestep normalization exists only for trained steps")
    if prep is not None:
        prep = dataclasses.replace(prep, T=T)
    train_set, eval_set = load_data(config["data"], config["run"]["seed"])
    split = config[section]["split"]
    if split not in ("train", "eval"):
        raise ConfigError(f"{section}.split must be train or eval, got {split!r}")
    return net, prep, T, train_set if split == "train" else eval_set


def cmd_eval(config: dict) -> int:
    net, prep, T, dataset = _checkpoint_setup(config, "eval")
    out = _prepare_out(config, "eval")
    res = evaluate(net, dataset, prep, T, config["eval"]["batch"], config["run"]["seed"])
    lines = [f"timesteps: {T}", f"accuracy: {res.accuracy:.4f}", "class,correct,total"]
    lines += [f"{k},{c},{t}" for k, (c, t) in enumerate(zip(res.correct, res.total))]
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, "eval.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_analyze(config: dict) -> int:
    net, prep, T, dataset = _checkpoint_setup(config, "analyze")
    out = _prepare_out(config, "analyze")
    rec = activity_map(net, dataset, T, config["analyze"]["batch"], prep, config["run"]["seed"])
    export_csv(rec.fractions, os.path.join(out, "activity.csv"), rec.layer_names)
    export_csv(rec.volume, os.path.join(out, "volume.csv"), rec.layer_names)
    written = ["activity.csv", "volume.csv"]
    if net.spec.bn == "bntt":
        export_csv(gamma_map(net), os.path.join(out, "gamma.csv"), rec.layer_names)
        written.append("gamma.csv")
    for name, row in zip(rec.layer_names, rec.fractions):
        print(f"{name:>8s}  mean activity {row.mean():.4f}")
    print("wrote " + ", ".join(written))
    return 0


def cmd_encode(config: dict) -> int:
    enc = config["encode"]
    path = enc.get("input")
    if not path:
        raise ConfigError("missing encode.input")
    if not os.path.exists(path):
        raise ConfigError(f"encode.input does not exist: {path}")
    mode, T = enc["mode"], enc["timesteps"]
    if mode not in ("poisson", "direct", "events"):
        raise ConfigError(f"encode.mode must be poisson, direct or events, got {mode!r}")
    if T < 1:
        raise ConfigError("encode.timesteps must be >= 1")
    if mode == "events":
        frames = events_to_frames(read_event_csv(path), T, enc["height"], enc["width"], enc["window"],
                                  enc["binarize"], enc["duration"])
    else:
        if path.endswith(".npy"):
            image = np.load(path)
        else:
            image = read_cifar_binary(path, "cifar10").images
        frames = poisson_encode(image, T, config["run"]["seed"]) if mode == "poisson" else direct_encode(image, T)
    out = _prepare_out(config, "encode")
    np.save(os.path.join(out, "encoded.npy"), np.ascontiguousarray(frames))
    print(f"encoded {path} -> {os.path.join(out, 'encoded.npy')} shape {tuple(frames.shape)}")
    return 0


def inspect_text(path) -> str:
    ck = read_checkpoint(path)
    spec = NetworkSpec.from_dict(ck.header["spec"])
    lines = [f"checkpoint: {path}", f"epoch: {ck.header.get('epoch')}", f"seed: {ck.header.get('seed')}", "spec:"]
    for key, value in spec.to_dict().items():
        if key == "lif":
            lines += [f"  lif.{k}: {v}" for k, v in value.items()]
        else:
            lines.append(f"  {key}: {value}")
    lines.append("parameters:")
    for name, arr in ck.params.items():
        lines.append(f"  {name:<40s} {str(arr.shape):>18s} {arr.size:>9d}")
    total = sum(a.size for a in ck.params.values())
    lines.append(f"total parameters: {total}")
    lines.append(f"build-time count: {count_parameters(spec)}")
    opt = ck.header.get("optimizer")
    if opt:
        lines.append("optimizer: " + ", ".join(f"{k}={v}" for k, v in opt.items()))
    meta = ck.header.get("metadata") or {}
    if "eval_accuracy" in meta:
        lines.append(f"eval accuracy at save: {meta['eval_accuracy']:.4f}")
    return "\n".join(lines) + "\n"


def cmd_inspect(config: dict) -> int:
    path = config["inspect"].get("checkpoint")
    if not path or not os.path.exists(path):
        raise ConfigError(f"inspect.checkpoint does not exist: {path}")
    text = inspect_text(path)
    out = _prepare_out(config, "inspect")
    with open(os.path.join(out, "inspect.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze, "encode": cmd_encode,
            "inspect": cmd_inspect}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikegrid", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI-style config file")
        p.add_argument("--seed", type=int, help="single seed for every random draw")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
        return p

    p = common(sub.add_parser("train", help="train a network and write a report"))
    p.add_argument("--preset", choices=sorted(PRESETS))

    for name, help_text in (("eval", "accuracy of a checkpoint"), ("analyze", "activity and scale maps")):
        p = common(sub.add_parser(name, help=help_text))
        p.add_argument("checkpoint", nargs="?")
        p.add_argument("--timesteps", type=int, help="inference steps (at most the stored T_train)")
        p.add_argument("--split", choices=("train", "eval"))

    p = common(sub.add_parser("encode", help="encode an image array, CIFAR file or event CSV"))
    p.add_argument("input", nargs="?")
    p.add_argument("--mode", choices=("poisson", "direct", "events"))
    p.add_argument("--timesteps", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--window", choices=("duration", "count"))
    p.add_argument("--duration", type=int)
    p.add_argument("--binarize", action="store_true")

    p = common(sub.add_parser("inspect", help="print a checkpoint's spec and parameter summary"))
    p.add_argument("checkpoint", nargs="?")
    return parser


def _thread_limit() -> Optional[int]:
    raw = os.environ.get("SPIKEGRID_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SPIKEGRID_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"SPIKEGRID_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        threads = _thread_limit()
        config = resolve(args.command, args)
        if threads is None:
            return COMMANDS[args.command](config)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"spikegrid {args.command}: {exc}", file=sys.stderr)
        return 2
    except (SpikegridError, OSError, ValueError) as exc:
        print(f"spikegrid {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
