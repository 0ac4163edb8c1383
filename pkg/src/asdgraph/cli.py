"""Command-line entry point: synth / train / eval / verify.

Every run is driven by one JSON config document (leaf fields overridable
with --set dotted.path=value); the sha256 digest of the canonicalized
config is embedded in every artifact. All commands are deterministic
given the config, including its mandatory seed: reruns produce
byte-identical files.

Exit codes: 0 success, 1 config error, 2 runtime/numeric error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .errors import AsdGraphError, ConfigError
from .evaluation import baselines, evaluate
from .graph import ModelConfig, SpeakerGraphNet
from .mfcc import MfccConfig
from .scene import EndpointPlan, SynthParams, load_scene, save_scene, synth_scene
from .training import TrainConfig, train
from .verify import print_table, run_all

DEFAULT_CONFIG = {
    "seed": None,  # required: no entropy defaults
    "paths": {
        "scenes_dir": "scenes",
        "eval_scenes_dir": None,  # defaults to scenes_dir
        "checkpoint": "checkpoint.json",
        "report": "report.json",
        "log": "train_log.jsonl",
    },
    "synth": {
        "num_scenes": 10,
        "speakers_min": 2,
        "speakers_max": 3,
        "num_frames": 120,
        "fps": 25.0,
        "stay_silent": 0.97,
        "stay_speaking": 0.94,
        "visual_noise": 0.4,
        "audio_noise": 0.1,
        "d_v": 8,
        "area_speaking_boost": 0.25,
    },
    "plan": {"k": 5, "l": 7, "clip_len": 15, "i": 2},
    "mfcc": {"sample_rate": 16000, "win_len": 0.025, "hop_len": 0.010,
             "n_filters": 26, "n_fft": 256, "n_cepstra": 13},
    "model": {"block_style": "ST", "num_blocks": 4, "hidden": 128,
              "d_in": 64, "d_a": 64, "encoder_width": 64},
    "train": {"mode": "full", "lr": 1e-3, "milestones": [6, 8], "gamma": 0.1,
              "epochs": 10, "samples_per_tracklet": 2, "batch": 1,
              "intermediate": True, "use_contrastive": True,
              "temperature": 0.07, "freeze_encoders": False},
}


def deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def apply_override(cfg: dict, dotted: str) -> None:
    if "=" not in dotted:
        raise ConfigError(f"--set expects dotted.path=value, got {dotted!r}")
    path, raw = dotted.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = path.split(".")
    node = cfg
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"--set: unknown config section {key!r} in {path!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"--set: unknown config field {path!r}")
    node[keys[-1]] = value


def load_config(args) -> dict:
    cfg = DEFAULT_CONFIG
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}")
        cfg = deep_merge(cfg, user)
    cfg = json.loads(json.dumps(cfg))  # deep copy
    for dotted in args.set or []:
        apply_override(cfg, dotted)
    if cfg.get("seed") is None:
        raise ConfigError("config must set a seed (no entropy defaults)")
    return cfg


def config_digest(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def dump_json(path, doc: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def make_plan(cfg: dict) -> EndpointPlan:
    p = cfg["plan"]
    return EndpointPlan(0, p["k"], p["l"], p["clip_len"], p["i"])


def make_mfcc(cfg: dict) -> MfccConfig:
    return MfccConfig(**cfg["mfcc"])


def load_scenes(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"scene directory not found: {directory}")
    paths = sorted(directory.glob("scene_*.json"))
    if not paths:
        raise ConfigError(f"no scene_*.json files in {directory}")
    return [load_scene(p) for p in paths]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: dict) -> int:
    s = cfg["synth"]
    if not 1 <= s["speakers_min"] <= s["speakers_max"] <= 4:
        raise ConfigError("synth: need 1 <= speakers_min <= speakers_max <= 4")
    rng = np.random.default_rng(cfg["seed"])
    out_dir = Path(cfg["paths"]["scenes_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for j in range(s["num_scenes"]):
        speakers = int(rng.integers(s["speakers_min"], s["speakers_max"] + 1))
        params = SynthParams(
            num_speakers=speakers, num_frames=s["num_frames"], fps=s["fps"],
            stay_silent=s["stay_silent"], stay_speaking=s["stay_speaking"],
            visual_noise=s["visual_noise"], audio_noise=s["audio_noise"],
            d_v=s["d_v"], area_speaking_boost=s["area_speaking_boost"])
        name = f"scene_{j:04d}"
        scene = synth_scene(params, rng, name=name)
        path = out_dir / f"{name}.json"
        save_scene(scene, path)
        files.append(path.name)
    dump_json(out_dir / "manifest.json", {
        "seed": cfg["seed"], "config_digest": config_digest(cfg),
        "num_scenes": s["num_scenes"], "files": files})
    print(f"wrote {len(files)} scenes to {out_dir}")
    return 0


def build_model_config(cfg: dict, scenes) -> ModelConfig:
    d_v = scenes[0].tracklets[0].visual_features.shape[1]
    return ModelConfig.for_task(
        cfg["plan"]["clip_len"], scenes[0].fps, d_v, make_mfcc(cfg),
        **cfg["model"])


def cmd_train(cfg: dict) -> int:
    scenes = load_scenes(cfg["paths"]["scenes_dir"])
    plan = make_plan(cfg)
    model_cfg = build_model_config(cfg, scenes)
    t = cfg["train"]
    train_cfg = TrainConfig(
        mode=t["mode"], lr=t["lr"], milestones=tuple(t["milestones"]),
        gamma=t["gamma"], epochs=t["epochs"],
        samples_per_tracklet=t["samples_per_tracklet"], batch=t["batch"],
        seed=cfg["seed"], intermediate=t["intermediate"],
        use_contrastive=t["use_contrastive"], temperature=t["temperature"],
        freeze_encoders=t["freeze_encoders"])
    result = train(scenes, plan, model_cfg, train_cfg, make_mfcc(cfg))
    digest = config_digest(cfg)
    ckpt = cfg["paths"]["checkpoint"]
    Path(ckpt).parent.mkdir(parents=True, exist_ok=True)
    result.model.save(ckpt, extra_header={"config_digest": digest})
    log_path = cfg["paths"]["log"]
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config_digest": digest}, sort_keys=True,
                            separators=(",", ":")) + "\n")
        for entry in result.log:
            fh.write(json.dumps(entry, sort_keys=True,
                                separators=(",", ":")) + "\n")
    final = result.epoch_mean_loss(train_cfg.epochs - 1)
    print(f"trained {len(result.log)} steps; final epoch mean loss {final:.4f}; "
          f"checkpoint {ckpt}")
    return 0


def cmd_eval(cfg: dict, with_baselines: bool) -> int:
    ckpt = Path(cfg["paths"]["checkpoint"])
    if not ckpt.exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    model, _header = SpeakerGraphNet.load(ckpt)
    scenes_dir = cfg["paths"]["eval_scenes_dir"] or cfg["paths"]["scenes_dir"]
    scenes = load_scenes(scenes_dir)
    plan = make_plan(cfg)
    result = evaluate(scenes, model, plan, make_mfcc(cfg))
    doc = result.to_dict()
    doc["config_digest"] = config_digest(cfg)
    if with_baselines:
        rng = np.random.default_rng(cfg["seed"])
        doc["baselines"] = {name: res.map
                            for name, res in baselines(scenes, rng).items()}
    dump_json(cfg["paths"]["report"], doc)
    print(f"mAP {result.map:.4f} over {result.n_predictions} predictions; "
          f"report {cfg['paths']['report']}")
    return 0


def cmd_verify() -> int:
    ok = print_table(run_all())
    return 0 if ok else 3


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


class Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> Parser:
    parser = Parser(prog="asdgraph",
                    description="Desk-scale active speaker detection on "
                                "spatio-temporal graphs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("synth", "generate a synthetic scene corpus"),
            ("train", "train a model on a scene corpus"),
            ("eval", "evaluate a checkpoint; --baselines adds reference rows"),
            ("verify", "run the invariant suite")]:
        p = sub.add_parser(name, help=help_text)
        if name != "verify":
            p.add_argument("--config", required=False,
                           help="JSON run config (defaults need only a seed)")
            p.add_argument("--set", action="append", metavar="PATH=VALUE",
                           help="override a leaf config field, e.g. train.lr=3e-4")
        if name == "eval":
            p.add_argument("--baselines", action="store_true",
                           help="include the five baseline scorers")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify()
        cfg = load_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.baselines)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2
    except AsdGraphError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
