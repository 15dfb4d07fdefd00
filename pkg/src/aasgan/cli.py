"""``aasgan`` command line: train, eval, augment, gen-synth, benchmark, plot.

Settings come from an optional ``key = value`` config file and from flags;
flags win. Every training key (``steps``, ``mode``, ``lr_d`` ...) is also a
flag (``--steps``, ``--mode``, ``--lr-d``). Synthetic-data keys carry a
``synth_`` prefix. Run outputs go to ``$AASGAN_OUTPUT_ROOT/<label>-<run id>``
(root defaults to ``./runs``), where the run id is a hash of the settings.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import typing
from dataclasses import fields
from pathlib import Path

from . import __version__
from .data import DataError, load_scenes, write_dataset
from .evaluation import (
    best_of_n_eval,
    best_of_n_scene,
    format_metrics_table,
    leave_one_out,
    plot_scene,
    scene_generator,
    write_metrics_csv,
)
from .nncore import CheckpointError, make_generator
from .synth import SynthConfig, generate_synthetic_dataset
from .training import Trainer, TrainConfig, TrainingError, dump_augmented, load_checkpoint, train_generator

OUTPUT_ROOT_ENV = "AASGAN_OUTPUT_ROOT"

RUN_KEYS = {
    "real_data": str,
    "synth_data": str,
    "label": str,
    "checkpoint_every": int,
    "datasets": str,
    "eval_n": int,
}
SYNTH_EXCLUDED = {"t_pred", "dt"}


class ConfigError(ValueError):
    pass


def _field_types(cls) -> dict[str, object]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def _known_keys() -> dict[str, object]:
    keys = dict(_field_types(TrainConfig))
    for name, tp in _field_types(SynthConfig).items():
        if name not in SYNTH_EXCLUDED:
            keys[f"synth_{name}"] = tp
    keys.update(RUN_KEYS)
    return keys


KNOWN_KEYS = _known_keys()


def convert(key: str, text: str):
    """Turn a config string into the Python value its key expects."""
    tp = KNOWN_KEYS[key]
    args = typing.get_args(tp)
    try:
        if typing.get_origin(tp) is tuple:
            parts = text.replace(":", ",").split(",")
            if len(parts) != len(args):
                raise ValueError(f"expected {len(args)} comma-separated values")
            return tuple(a(p.strip()) for a, p in zip(args, parts))
        if type(None) in args:
            if text.strip().lower() in ("none", "off", ""):
                return None
            inner = next(a for a in args if a is not type(None))
            return inner(text)
        return tp(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None


def read_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in KNOWN_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in values and values[key] != value:
                raise ConfigError(f"{path}:{lineno}: conflicting values for {key!r}")
            values[key] = value
    return values


def resolve_settings(config_path, overrides: dict[str, str]) -> dict[str, str]:
    values = read_config_file(config_path) if config_path else {}
    values.update(overrides)
    for key in values:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    return values


def train_config(values: dict[str, str]) -> TrainConfig:
    kwargs = {k: convert(k, v) for k, v in values.items() if k in TrainConfig.field_names()}
    return TrainConfig(**kwargs)


def synth_config(values: dict[str, str], t_pred: int) -> SynthConfig:
    kwargs = {k[len("synth_"):]: convert(k, v) for k, v in values.items() if k.startswith("synth_")}
    return SynthConfig(t_pred=t_pred, **kwargs)


def run_dir(values: dict[str, str], command: str) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    label = values.get("label", command)
    digest = hashlib.sha1(json.dumps([command, values], sort_keys=True).encode()).hexdigest()[:10]
    path = root / f"{label}-{digest}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_settings(values: dict[str, str], path: Path) -> None:
    with path.open("w", encoding="utf-8") as f:
        for key in sorted(values):
            f.write(f"{key} = {values[key]}\n")


def _load_many(paths: str, cfg: TrainConfig):
    scenes = []
    for p in (s.strip() for s in paths.split(",")):
        if p:
            scenes.extend(load_scenes(p, cfg.t_obs, cfg.t_pred))
    return scenes


def _synthetic_scenes(values: dict[str, str], cfg: TrainConfig):
    if "synth_data" in values:
        return _load_many(values["synth_data"], cfg)
    return generate_synthetic_dataset(synth_config(values, cfg.t_pred))


def _needs_real(cfg: TrainConfig) -> bool:
    return cfg.mode != "sgan-synthetic"


def _needs_synth(cfg: TrainConfig) -> bool:
    return cfg.mode != "sgan-real"


# -- commands ------------------------------------------------------------------

def cmd_train(args, values) -> int:
    if args.resume:
        cfg = load_checkpoint(args.resume)[1]
    else:
        cfg = train_config(values)
    real = []
    if _needs_real(cfg):
        if "real_data" not in values:
            raise ConfigError(f"mode {cfg.mode} needs real_data")
        real = _load_many(values["real_data"], cfg)
    synth = _synthetic_scenes(values, cfg) if _needs_synth(cfg) else []

    out = run_dir(values, "train")
    _write_settings(values, out / "config.txt")
    log_path = out / "losses.log"
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume, real, synth)
        if "steps" in values:
            trainer.cfg.steps = convert("steps", values["steps"])
    else:
        log_path.unlink(missing_ok=True)
        trainer = Trainer(cfg, real, synth)

    every = convert("checkpoint_every", values["checkpoint_every"]) if "checkpoint_every" in values else 0

    def periodic(tr, report):
        if every and tr.step % every == 0:
            tr.save_checkpoint(out / f"checkpoint-{tr.step:06d}.npz")

    trainer.run(log_path=log_path, callback=periodic)
    trainer.save_checkpoint(out / "checkpoint.npz")
    if cfg.mode == "independent-augmenter":
        dump_augmented(trainer.A, synth, out / "augmented.txt", trainer.gen)
    print(f"trained {trainer.step} steps in mode {cfg.mode}; outputs in {out}")
    return 0


def cmd_eval(args, values) -> int:
    models, cfg, step = load_checkpoint(args.checkpoint)
    for flag, expected in (("t_obs", cfg.t_obs), ("t_pred", cfg.t_pred)):
        given = getattr(args, flag)
        if given is not None and given != expected:
            raise ConfigError(f"--{flag.replace('_', '-')} {given} incompatible with checkpoint ({expected})")
    scenes = load_scenes(args.dataset, cfg.t_obs, cfg.t_pred)
    name = args.name or Path(args.dataset).stem
    report = best_of_n_eval(models.generator, scenes, args.n, args.seed, name)
    print(format_metrics_table([report]), end="")
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"metrics-{name}.csv"
    write_metrics_csv([report], out)
    return 0


def cmd_augment(args, values) -> int:
    models, cfg, _ = load_checkpoint(args.checkpoint)
    if models.augmenter is None:
        raise CheckpointError(f"{args.checkpoint} has no Augmenter weights (trained in mode {cfg.mode})")
    scenes = load_scenes(args.synth_dataset, cfg.t_obs, cfg.t_pred)
    dump_augmented(models.augmenter, scenes, args.out, make_generator(args.seed))
    print(f"wrote {len(scenes)} synth-augmented scenes to {args.out}")
    return 0


def cmd_gen_synth(args, values) -> int:
    t_pred = convert("t_pred", values["t_pred"]) if "t_pred" in values else 20
    scenes = generate_synthetic_dataset(synth_config(values, t_pred))
    write_dataset(scenes, args.out)
    print(f"wrote {len(scenes)} synthetic scenes to {args.out}")
    return 0


def parse_datasets(spec: str) -> dict[str, str]:
    out = {}
    for item in (s.strip() for s in spec.split(",")):
        if not item:
            continue
        if "=" not in item:
            raise ConfigError(f"dataset entry {item!r} must look like name=path")
        name, path = (s.strip() for s in item.split("=", 1))
        if name in out:
            raise ConfigError(f"dataset {name!r} listed twice")
        out[name] = path
    return out


def cmd_benchmark(args, values) -> int:
    cfg = train_config(values)
    named = parse_datasets(values.get("datasets", ""))
    if len(named) < 2:
        raise ConfigError(f"benchmark needs at least 2 datasets, got {len(named)}")
    datasets = {name: load_scenes(path, cfg.t_obs, cfg.t_pred) for name, path in named.items()}
    synth = _synthetic_scenes(values, cfg) if _needs_synth(cfg) else []
    N = convert("eval_n", values["eval_n"]) if "eval_n" in values else 20

    def train_fn(real):
        return train_generator(cfg, real, synth)

    reports = leave_one_out(datasets, train_fn, N, cfg.seed,
                            progress=lambda name: print(f"held out: {name}", file=sys.stderr))
    out = run_dir(values, "benchmark")
    _write_settings(values, out / "config.txt")
    write_metrics_csv(reports, out / "results.csv")
    table = format_metrics_table(reports)
    (out / "results.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    print(f"results in {out}")
    return 0


def cmd_plot(args, values) -> int:
    predictions = {}
    t_obs, t_pred = args.t_obs or 8, args.t_pred or 20
    loaded = []
    for item in args.prediction or []:
        if "=" not in item:
            raise ConfigError(f"--prediction {item!r} must look like name=checkpoint")
        name, ckpt = item.split("=", 1)
        models, cfg, _ = load_checkpoint(ckpt)
        loaded.append((name, models.generator))
        t_obs, t_pred = cfg.t_obs, cfg.t_pred
    scenes = load_scenes(args.dataset, t_obs, t_pred)
    if not 0 <= args.scene_index < len(scenes):
        raise ConfigError(f"scene index {args.scene_index} out of range (dataset has {len(scenes)} scenes)")
    scene = scenes[args.scene_index]
    for name, G in loaded:
        if (G.t_obs, G.t_pred) != (t_obs, t_pred):
            raise ConfigError(f"checkpoint {name} uses t_obs/t_pred {G.t_obs}/{G.t_pred}, expected {t_obs}/{t_pred}")
        pred, _, _ = best_of_n_scene(G, scene, args.n, scene_generator(args.seed, args.scene_index))
        predictions[name] = pred
    plot_scene(scene, predictions, args.out, t_obs)
    print(f"wrote {args.out}")
    return 0


# -- parser --------------------------------------------------------------------

class _Once(argparse.Action):
    """Store a flag value, rejecting a second, different value for the same key."""

    def __call__(self, parser, namespace, values, option_string=None):
        prev = getattr(namespace, self.dest, None)
        if prev is not None and prev != values:
            parser.error(f"conflicting values for {option_string}: {prev!r} and {values!r}")
        setattr(namespace, self.dest, values)


def _add_setting_flags(p: argparse.ArgumentParser, keys) -> None:
    p.add_argument("--config", help="key = value settings file")
    group = p.add_argument_group("settings (override the config file)")
    for key in keys:
        opts = [f"--{key.replace('_', '-')}"]
        if "_" in key:
            opts.append(f"--{key}")
        group.add_argument(*opts, dest=f"set__{key}", action=_Once, default=None, metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aasgan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    all_keys = list(KNOWN_KEYS)

    p = sub.add_parser("train", help="train a model in one of the five modes")
    _add_setting_flags(p, all_keys)
    p.add_argument("--resume", help="continue from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="best-of-N ADE/FDE of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--n", type=int, default=20, help="samples per scene (default 20)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-obs", type=int)
    p.add_argument("--t-pred", type=int)
    p.add_argument("--name", help="dataset name in the report")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment", help="write synth-augmented trajectories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--synth-dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("gen-synth", help="generate a straight-line synthetic dataset")
    _add_setting_flags(p, [k for k in all_keys if k.startswith("synth_")] + ["t_pred"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("benchmark", help="leave-one-out over named datasets")
    _add_setting_flags(p, all_keys)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("plot", help="plot a scene with predictions from checkpoints")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scene-index", type=int, default=0)
    p.add_argument("--prediction", action="append", metavar="NAME=CHECKPOINT")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-obs", type=int)
    p.add_argument("--t-pred", type=int)
    p.add_argument("--out", default="scene.svg")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k[len("set__"):]: v for k, v in vars(args).items() if k.startswith("set__") and v is not None}
    try:
        values = resolve_settings(getattr(args, "config", None), overrides)
        return args.func(args, values)
    except (ConfigError, DataError, CheckpointError, TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
