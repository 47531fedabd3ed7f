"""Command-line entry point.

    semsup COMMAND --config PATH [--seed INT] [--out DIR] [--set key=value ...]

Exit codes: 0 success, 2 validation failure, 3 numerical failure, 4 leakage guard.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .builders import filter_annotation_file, make_json_descriptions
from .data import ManifestError, load_manifest
from .evaluation import LeakageError, export_embeddings
from .experiments import ablate_descriptions, build_model, evaluate, fit, scenario_instances
from .models import ModelConfig
from .synthetic import SyntheticTaskSpec, generate
from .tensorcore import load_checkpoint, save_checkpoint
from .textproc import Lexicon
from .training import NumericalError, TrainConfig

log = logging.getLogger("semsup")

COMMANDS = ("train", "evaluate", "ablate-descriptions", "gen-synthetic", "make-json-descriptions",
            "filter-annotations", "export-embeddings")
SECTIONS = ("data", "synthetic", "model", "train", "evaluate", "ablation", "json_descriptions", "annotations")
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_LEAKAGE = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# --- config -----------------------------------------------------------------

def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p!r} is not a section")
    node[parts[-1]] = parse_value(raw)


def load_config(path, overrides=(), seed: int | None = None) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(cfg) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    for o in overrides:
        apply_override(cfg, o)
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    base = Path(path).resolve().parent
    for section, key in (("data", "manifest"), ("evaluate", "checkpoint"), ("model", "word_vectors")):
        value = cfg.get(section, {}).get(key)
        if isinstance(value, str) and not os.path.isabs(value):
            cfg[section][key] = str(base / value)
    for key in ("lexicon", "related_terms", "annotations", "instances"):
        for section in ("json_descriptions", "annotations"):
            value = cfg.get(section, {}).get(key)
            if isinstance(value, str) and not os.path.isabs(value):
                cfg[section][key] = str(base / value)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig.from_dict(dict(cfg.get("model", {})))
    except TypeError as exc:
        raise ConfigError(f"model: {exc}") from None


def train_config(cfg: dict) -> TrainConfig:
    d = dict(cfg.get("train", {}))
    d.setdefault("seed", cfg["seed"])
    try:
        return TrainConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(f"train: {exc}") from None


# --- run directories ----------------------------------------------------------

@contextmanager
def run_directory(out: Path, command: str, cfg: dict):
    h = config_hash(cfg)
    run_dir = out / f"{command}-{h[:12]}-s{cfg['seed']}"
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"run directory {run_dir} is locked by another process") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
            json.dump(cfg, fh, indent=2)
        with open(run_dir / "run.json", "w", encoding="utf-8") as fh:
            json.dump({"command": command, "seed": cfg["seed"], "config_hash": h}, fh, indent=2)
        yield run_dir, h
    finally:
        lock.unlink(missing_ok=True)


def dataset_for(cfg: dict, run_dir: Path):
    manifest = cfg.get("data", {}).get("manifest")
    if manifest:
        return load_manifest(manifest)
    if "synthetic" in cfg:
        spec = SyntheticTaskSpec.from_dict(cfg["synthetic"])
        return load_manifest(generate(spec, run_dir / "data"))
    raise ConfigError("config needs data.manifest or a synthetic section")


# --- commands ---------------------------------------------------------------

def cmd_gen_synthetic(cfg, run_dir, h):
    if "synthetic" not in cfg:
        raise ConfigError("gen-synthetic needs a synthetic section")
    spec = SyntheticTaskSpec.from_dict(cfg["synthetic"])
    path = generate(spec, run_dir / "data")
    print(path)


def cmd_train(cfg, run_dir, h):
    ds = dataset_for(cfg, run_dir)
    model, history = fit(ds, model_config(cfg), train_config(cfg))
    save_checkpoint(run_dir / "model.ckpt", model.params)
    history.write_csv(run_dir / "history.csv")
    print(run_dir / "model.ckpt")


TRAINING_KEYS = ("data", "synthetic", "model", "train", "seed")


def _training_view(cfg: dict) -> dict:
    return {k: cfg.get(k) for k in TRAINING_KEYS}


def _checkpoint_path(cfg, out: Path) -> Path:
    """Explicit evaluate.checkpoint, else the train run whose training sections match."""
    explicit = cfg.get("evaluate", {}).get("checkpoint")
    if explicit:
        return Path(explicit)
    want = _training_view(cfg)
    for run_dir in sorted(out.glob(f"train-*-s{cfg['seed']}")):
        try:
            with open(run_dir / "config.json", encoding="utf-8") as fh:
                seen = json.load(fh)
        except (OSError, json.JSONDecodeError):
            continue
        if _training_view(seen) == want and (run_dir / "model.ckpt").exists():
            return run_dir / "model.ckpt"
    raise ConfigError(f"no checkpoint given and no matching train run under {out}; run train first")


def _trained_model(cfg, run_dir, out):
    ds = dataset_for(cfg, run_dir)
    model = build_model(ds, model_config(cfg), cfg["seed"])
    model.load_state(load_checkpoint(_checkpoint_path(cfg, out)))
    return ds, model


def cmd_evaluate(cfg, run_dir, h, out):
    ds, model = _trained_model(cfg, run_dir, out)
    ev = cfg.get("evaluate", {})
    tc = train_config(cfg)
    reports = []
    for sid in ev.get("scenarios", sorted(ds.scenarios)):
        if model.config.kind == "sup" and sid in ("S2", "S3"):
            continue
        rep = evaluate(ds, model, sid, cfg["seed"], tc.batch_size, ev.get("eval_samples", tc.eval_samples))
        rep.config_hash = h
        reports.append(rep)
        with open(run_dir / f"eval_{sid}.json", "w", encoding="utf-8") as fh:
            fh.write(rep.to_json())
        print(f"{sid} {rep.metric}={rep.value:.4f} n={rep.n_instances}")


def cmd_ablate(cfg, run_dir, h):
    ds = dataset_for(cfg, run_dir)
    ab = cfg.get("ablation", {})
    rows = ablate_descriptions(ds, model_config(cfg), train_config(cfg), ab.get("n", [1, 5, 10]),
                               ab.get("concat", [10]), ab.get("seeds", [0, 1, 2]), ab.get("scenarios"))
    cols = [k for k in rows[0] if k != "arm"]
    with open(run_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# seed={cfg['seed']} config_hash={h}\n")
        w = csv.writer(fh)
        w.writerow(["arm"] + cols)
        for r in rows:
            w.writerow([r["arm"]] + [f"{100 * r[c]:.1f}" for c in cols])
    print("arm".ljust(12) + "".join(c.rjust(8) for c in cols))
    for r in rows:
        print(r["arm"].ljust(12) + "".join(f"{100 * r[c]:8.1f}" for c in cols))


def cmd_make_json(cfg, run_dir, h):
    jd = cfg.get("json_descriptions")
    if not jd:
        raise ConfigError("make-json-descriptions needs a json_descriptions section")
    lexicon = Lexicon.load(jd["lexicon"])
    with open(jd["related_terms"], encoding="utf-8") as fh:
        related = json.load(fh)
    classes = jd.get("classes") or sorted(related)
    cat = make_json_descriptions(lexicon, classes, related, int(jd.get("k", 5)), np.random.default_rng(cfg["seed"]))
    cat.save(run_dir / "json_descriptions.jsonl")
    print(run_dir / "json_descriptions.jsonl")


def cmd_filter(cfg, run_dir, h):
    an = cfg.get("annotations")
    if not an:
        raise ConfigError("filter-annotations needs an annotations section")
    n = filter_annotation_file(an["annotations"], an["instances"], Lexicon.load(an["lexicon"]),
                               run_dir / "annotations_filtered.jsonl", bool(an.get("substring_filter", False)))
    print(f"{n} annotation records -> {run_dir / 'annotations_filtered.jsonl'}")


def cmd_export(cfg, run_dir, h, out):
    ds, model = _trained_model(cfg, run_dir, out)
    sid = cfg.get("evaluate", {}).get("embedding_scenario", "S2" if "S2" in ds.scenarios else "S0")
    sc = ds.scenarios[sid]
    n = export_embeddings(model, scenario_instances(ds, sid), ds.catalogs[sc.description_split], sc,
                          run_dir / f"embeddings_{sid}.csv", cfg["seed"], h)
    print(f"{n} rows -> {run_dir / f'embeddings_{sid}.csv'}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semsup", description=__doc__.splitlines()[0] if __doc__ else None)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="runs", help="parent directory for run directories")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set train.lr=0.001")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        model_config(cfg)
        train_config(cfg)
        with run_directory(out, args.command, cfg) as (run_dir, h):
            if args.command == "gen-synthetic":
                cmd_gen_synthetic(cfg, run_dir, h)
            elif args.command == "train":
                cmd_train(cfg, run_dir, h)
            elif args.command == "evaluate":
                cmd_evaluate(cfg, run_dir, h, out)
            elif args.command == "ablate-descriptions":
                cmd_ablate(cfg, run_dir, h)
            elif args.command == "make-json-descriptions":
                cmd_make_json(cfg, run_dir, h)
            elif args.command == "filter-annotations":
                cmd_filter(cfg, run_dir, h)
            else:
                cmd_export(cfg, run_dir, h, out)
    except LeakageError as exc:
        print(f"leakage guard: {exc}", file=sys.stderr)
        return EXIT_LEAKAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ManifestError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
