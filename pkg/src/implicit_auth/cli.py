"""``implicit-auth`` command line.

Exit codes: 0 success, 1 validation or bound failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import context as ctxmod
from .config import Config
from .context import CONTEXTS, ForestModel, confusion, train_forest
from .dataset import (DEVICE_SETS, PHONE_AND_WATCH, FeatureDataset, build_dataset, enrollment_script, layout_for,
                      victim_split)
from .evaluation import (CONTEXT_AWARE, CONTEXT_MODES, ablation, crossval, masquerade_eval, sweep_data_size,
                         sweep_window_size, write_curve)
from .features import CANDIDATE_FEATURES, candidate_matrix, device_matrix
from .krr import TrainingSet, train_primal
from .pipeline import ModelBank, ResponsePolicy, RetrainConfig, run_stream
from .selection import LabeledFeatureSet, SelectionConfig, selection_report
from .sensors import SENSORS, ValidationError, read_sensor_file, segment_matrix, write_sensor_file
from .synth import PRESETS, generate_user, make_population

log = logging.getLogger("implicit_auth")

CONFIG_FLAGS = ("sample_rate_hz", "window_s", "data_size", "rho", "alpha", "corr_threshold", "epsilon_cs",
                "T_windows", "lockout_after", "seed", "data_dir", "model_dir", "results_dir")


class BoundFailure(Exception):
    """An assertion-bearing run missed its bound."""


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True), encoding="utf-8")


def _truth_contexts(path: Path) -> dict:
    out: dict = {}
    if not path.exists():
        return out
    for line in path.read_text(encoding="utf-8").splitlines()[1:]:
        user, k, ctx = line.split(",")
        out[(user, int(k))] = ctx
    return out


def _population_dataset(args, cfg: Config) -> tuple[list, FeatureDataset]:
    profiles = make_population(args.users, args.preset, cfg.seed)
    return profiles, build_dataset(profiles, args.windows, cfg.window_s, cfg.sample_rate_hz, session_seed=cfg.seed)


# -- subcommands --------------------------------------------------------------

def cmd_generate(args, cfg: Config) -> int:
    out = Path(cfg.data_dir)
    profiles = make_population(args.users, args.preset, cfg.seed)
    script = enrollment_script(args.windows, cfg.window_s)
    truth = ["user_id,k,context"]
    for p in profiles:
        session = generate_user(p, script, cfg.sample_rate_hz, session_seed=cfg.seed)
        write_sensor_file(out / f"{p.user_id}.{args.format}", session.streams.values())
        n = int(script.duration_s // cfg.window_s)
        truth += [f"{p.user_id},{k},{c}" for k, c in enumerate(session.window_contexts(cfg.window_s, n))]
        log.info("wrote %s", p.user_id)
    (out / "truth.csv").write_text("\n".join(truth) + "\n", encoding="utf-8")
    return 0


def _sensor_files(data_dir: Path) -> list[Path]:
    return sorted(p for p in data_dir.iterdir() if p.suffix in (".csv", ".jsonl") and p.stem != "truth")


def _file_features(path: Path, cfg: Config):
    streams = read_sensor_file(path, cfg.sample_rate_hz)
    blocks = {}
    for device in ("phone", "watch"):
        mats = [segment_matrix(streams[(device, s)], cfg.window_s)[0] for s in SENSORS]
        blocks[device] = device_matrix(mats[0], mats[1], cfg.sample_rate_hz)
    n = min(len(b) for b in blocks.values())
    return blocks["phone"][:n], blocks["watch"][:n]


def cmd_extract(args, cfg: Config) -> int:
    data_dir = Path(cfg.data_dir)
    truth = _truth_contexts(data_dir / "truth.csv")
    parts = []
    for path in _sensor_files(data_dir):
        phone, watch = _file_features(path, cfg)
        ctx = [CONTEXTS.index(truth.get((path.stem, k), CONTEXTS[0])) for k in range(len(phone))]
        parts.append(FeatureDataset(phone, watch, np.array([path.stem] * len(phone)), np.array(ctx, dtype=int)))
    FeatureDataset.concat(parts).save_csv(args.out)
    return 0


def cmd_select(args, cfg: Config) -> int:
    data_dir = Path(cfg.data_dir)
    per_group: dict = {}
    for path in _sensor_files(data_dir):
        streams = read_sensor_file(path, cfg.sample_rate_hz)
        for key, stream in streams.items():
            mags, _ = segment_matrix(stream, cfg.window_s)
            per_group.setdefault(key, {})[path.stem] = candidate_matrix(mags, cfg.sample_rate_hz)
    sel = SelectionConfig(cfg.alpha, cfg.corr_threshold)
    report = {f"{d}_{s}": selection_report(LabeledFeatureSet(users, CANDIDATE_FEATURES), sel)
              for (d, s), users in sorted(per_group.items())}
    _dump(Path(args.out or Path(cfg.results_dir) / "selection.json"), report)
    return 0


def cmd_train_context(args, cfg: Config) -> int:
    ds = FeatureDataset.load_csv(args.features)
    mask = ds.user != args.exclude_user if args.exclude_user else np.ones(len(ds), dtype=bool)
    forest = train_forest(ds.phone[mask], ds.context[mask], n_trees=args.trees, seed=cfg.seed)
    out = Path(cfg.model_dir) / "context.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    forest.save(out)
    if args.exclude_user:
        cm = confusion(forest, ds.phone[~mask], ds.context[~mask])
        _dump(Path(cfg.results_dir) / "context_confusion.json", cm.to_dict())
    return 0


def cmd_detect_context(args, cfg: Config) -> int:
    forest = ForestModel.load(args.model or Path(cfg.model_dir) / "context.json")
    phone, _ = _file_features(Path(args.data), cfg)
    for k, row in enumerate(phone):
        label, frac = ctxmod.detect(forest, row)
        print(json.dumps({"k": k, "context": label, "vote_fraction": frac}))
    return 0


def cmd_train_auth(args, cfg: Config) -> int:
    ds = FeatureDataset.load_csv(args.features)
    owner = args.owner or ds.users[0]
    model_dir = Path(cfg.model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    ctx_path = model_dir / "context.json"
    if ctx_path.exists():
        forest = ForestModel.load(ctx_path)
    else:
        forest = train_forest(ds.phone[ds.user != owner], ds.context[ds.user != owner], n_trees=100, seed=cfg.seed)
        forest.save(ctx_path)
    idx, y = victim_split(ds, owner, cfg.data_size, np.random.default_rng(cfg.seed))
    detected = forest.predict(ds.phone[idx])
    contexts = CONTEXTS if args.context == "all" else (args.context,)
    device_sets = DEVICE_SETS if args.device_set == "all" else (args.device_set,)
    index_path = model_dir / "bank.json"
    index = {"owner_id": str(owner), "version": 1, "models": []}
    if index_path.exists():
        old = json.loads(index_path.read_text(encoding="utf-8"))
        if old.get("owner_id") == str(owner):
            index = old
    for ctx in contexts:
        sel = detected == CONTEXTS.index(ctx)
        if len(np.unique(y[sel])) < 2:
            raise ValidationError(f"no usable {ctx} windows for owner {owner!r}")
        for dset in device_sets:
            model = train_primal(TrainingSet.from_rows(ds.rows(dset)[idx][sel], y[sel]), cfg.rho, ctx, layout_for(dset))
            name = f"auth_{ctx}_{dset.replace('+', '_')}.json"
            model.save(model_dir / name)
            index["models"] = [e for e in index["models"] if (e["context"], e["device_set"]) != (ctx, dset)]
            index["models"].append({"context": ctx, "device_set": dset, "file": name})
    index_path.write_text(json.dumps(index, indent=1), encoding="utf-8")
    return 0


def cmd_run(args, cfg: Config) -> int:
    bank = ModelBank.load(cfg.model_dir)
    streams = read_sensor_file(args.data, cfg.sample_rate_hz)
    decisions, events = run_stream(bank, streams, ResponsePolicy(cfg.lockout_after),
                                   RetrainConfig(cfg.epsilon_cs, cfg.T_windows), cfg.window_s)
    by_k: dict = {}
    for e in events:
        by_k.setdefault(e.k, []).append(e.to_dict())
    lines = [json.dumps({"k": d.k, "context": d.context, "cs": d.cs, "verdict": d.verdict,
                         "events": by_k.get(d.k, [])}) for d in decisions]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args, cfg: Config) -> int:
    if args.features:
        ds = FeatureDataset.load_csv(args.features)
    else:
        _, ds = _population_dataset(args, cfg)
    kwargs = dict(folds=args.folds, iterations=args.iterations, seed=cfg.seed, data_size=cfg.data_size,
                  rho=cfg.rho, classifier=args.classifier)
    results = Path(cfg.results_dir)
    if args.ablation:
        res = ablation(ds, **kwargs)
        out = {"cells": {k: r.to_dict(include_runtime=False) for k, r in res["cells"].items()},
               "ordering": res["ordering"]}
        acc = res["accuracy"][f"{PHONE_AND_WATCH}/{CONTEXT_AWARE}"]
        ok = all(res["ordering"].values()) and acc >= args.min_accuracy
    else:
        rep = crossval(ds, device_set=args.device_set, context_mode=args.context_mode, **kwargs)
        out = rep.to_dict(include_runtime=False)
        acc = rep.accuracy
        ok = acc >= args.min_accuracy
    _dump(results / "evaluate.json", out)
    print(json.dumps({"accuracy": acc, "min_accuracy": args.min_accuracy, "pass": ok}))
    if not ok:
        raise BoundFailure(f"accuracy {acc:.4f} below bound {args.min_accuracy}")
    return 0


def cmd_sweep(args, cfg: Config) -> int:
    kwargs = dict(folds=args.folds, iterations=args.iterations, seed=cfg.seed, rho=cfg.rho)
    if args.kind == "window":
        profiles = make_population(args.users, args.preset, cfg.seed)
        sizes = [float(s) for s in args.sizes.split(",")] if args.sizes else list(range(1, 17))
        curve = sweep_window_size(profiles, sizes, args.windows, session_seed=cfg.seed, **kwargs)
    else:
        _, ds = _population_dataset(args, cfg)
        sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else [100, 200, 400, 600, 800]
        curve = sweep_data_size(ds, sizes, **kwargs)
    write_curve(cfg.results_dir, f"sweep_{args.kind}", curve)
    return 0


def cmd_masquerade(args, cfg: Config) -> int:
    from .pipeline import enroll

    profiles, ds = _population_dataset(args, cfg)
    victim = profiles[args.victim]
    others = ds.user != victim.user_id
    forest = train_forest(ds.phone[others], ds.context[others], n_trees=100, seed=cfg.seed)
    bank = enroll(ds, victim.user_id, forest, cfg.rho, cfg.data_size, cfg.seed)
    fids = [float(f) for f in args.fidelities.split(",")]
    attackers = [p for p in profiles if p is not victim]
    res = masquerade_eval(bank, victim, attackers, fids, args.attempts, args.horizon, seed=cfg.seed,
                          policy=ResponsePolicy(cfg.lockout_after), window_s=cfg.window_s)
    _dump(Path(cfg.results_dir) / "masquerade.json", [r.to_dict() for r in res])
    ok = all(all(r.within_3sigma) for r in res)
    ok &= all(r.survival[min(3, args.horizon)] == 0.0 for r in res if r.fidelity == 0.0)
    if not ok:
        raise BoundFailure("masquerade survival outside the independence model bounds")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # shared flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS, allow_abbrev=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("-v", "--verbose", action="store_true")
    for name in CONFIG_FLAGS:
        common.add_argument(f"--{name.replace('_', '-')}", dest=name)
    p = argparse.ArgumentParser(prog="implicit-auth", description=__doc__.splitlines()[0], allow_abbrev=False,
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    _add_parser = sub.add_parser
    sub.add_parser = lambda *a, **kw: _add_parser(*a, parents=[common], allow_abbrev=False, **kw)

    def population(sp, windows=50):
        sp.add_argument("--preset", choices=sorted(PRESETS), default="separable")
        sp.add_argument("--users", type=int, default=10)
        sp.add_argument("--windows", type=int, default=windows, help="windows per context per user")

    g = sub.add_parser("generate", help="write synthetic sensor files and a truth sidecar")
    population(g)
    g.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    e = sub.add_parser("extract", help="sensor files -> feature CSV")
    e.add_argument("--out", required=True)

    s = sub.add_parser("select", help="feature-selection report (JSON)")
    s.add_argument("--out")

    tc = sub.add_parser("train-context", help="train the context forest")
    tc.add_argument("--features", required=True)
    tc.add_argument("--exclude-user")
    tc.add_argument("--trees", type=int, default=100)

    dc = sub.add_parser("detect-context", help="per-window context of a sensor file")
    dc.add_argument("--data", required=True)
    dc.add_argument("--model")

    ta = sub.add_parser("train-auth", help="train authentication models for one owner")
    ta.add_argument("--features", required=True)
    ta.add_argument("--owner")
    ta.add_argument("--context", choices=CONTEXTS + ("all",), default="all")
    ta.add_argument("--device-set", choices=DEVICE_SETS + ("all",), default="all")

    r = sub.add_parser("run", help="stream authentication over a sensor file")
    r.add_argument("--data", required=True)
    r.add_argument("--out")

    ev = sub.add_parser("evaluate", help="cross-validated FRR/FAR/accuracy")
    population(ev, windows=400)
    ev.add_argument("--features")
    ev.add_argument("--folds", type=int, default=10)
    ev.add_argument("--iterations", type=int, default=50)
    ev.add_argument("--classifier", choices=("krr", "linear_regression", "naive_bayes"), default="krr")
    ev.add_argument("--device-set", choices=DEVICE_SETS, default=PHONE_AND_WATCH)
    ev.add_argument("--context-mode", choices=CONTEXT_MODES, default=CONTEXT_AWARE)
    ev.add_argument("--ablation", action="store_true")
    ev.add_argument("--min-accuracy", type=float, default=0.95)

    sw = sub.add_parser("sweep", help="window-size or data-size sweep")
    population(sw, windows=100)
    sw.add_argument("--kind", choices=("window", "data"), required=True)
    sw.add_argument("--sizes")
    sw.add_argument("--folds", type=int, default=10)
    sw.add_argument("--iterations", type=int, default=1)

    m = sub.add_parser("masquerade", help="mimicry attack survival curves")
    population(m, windows=400)
    m.add_argument("--victim", type=int, default=0)
    m.add_argument("--fidelities", default="0,0.5,1")
    m.add_argument("--attempts", type=int, default=20)
    m.add_argument("--horizon", type=int, default=5)
    return p


COMMANDS = {
    "generate": cmd_generate, "extract": cmd_extract, "select": cmd_select,
    "train-context": cmd_train_context, "detect-context": cmd_detect_context, "train-auth": cmd_train_auth,
    "run": cmd_run, "evaluate": cmd_evaluate, "sweep": cmd_sweep, "masquerade": cmd_masquerade,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = Config.load(getattr(args, "config", None), {k: getattr(args, k, None) for k in CONFIG_FLAGS})
        return COMMANDS[args.command](args, cfg)
    except (ValidationError, BoundFailure, LookupError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
