"""Command-line front end and experiment harness.

Subcommands: gen, poison, train, eval, search, defend, report. Each
validates its config before any side effect, writes outputs under the
config's out_dir, and marks in-progress work with a ``.partial`` file
that is removed on success. Timestamps go only to the run.log sidecar
so reruns with identical seeds produce byte-identical artifacts.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
failure.
"""

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bo, data, defenses, model, poison
from .cloud import GuardMode, LabeledCloud, center_and_scale, resample
from .data import Dataset, FormatError, SyntheticSpec
from .model import TrainConfig, TrainingError
from .poison import BallSpec, PoisonSpec, Trigger
from .preprocess import Pipeline, full_defense_ops

SCHEMA_VERSION = 1
OUT_ROOT_ENV = "FEATBACK_OUT_ROOT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise UsageError("config root must be an object")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise UsageError(
            f"config schema_version must be {SCHEMA_VERSION}, got {cfg.get('schema_version')!r}"
        )
    return cfg


def _require(cfg, section, command):
    if section not in cfg:
        raise UsageError(f"'{command}' requires a '{section}' section in the config")
    if not isinstance(cfg[section], dict):
        raise UsageError(f"config section '{section}' must be an object")
    return cfg[section]


def _seed_for(cfg, args, command):
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    if "seed" in cfg:
        return int(cfg["seed"])
    raise UsageError(f"'{command}' is stochastic: pass --seed or set 'seed' in the config")


def _out_dir(cfg, args):
    out = getattr(args, "out", None) or cfg.get("out_dir")
    if out is None:
        raise UsageError("no output directory: pass --out or set 'out_dir' in the config")
    root = os.environ.get(OUT_ROOT_ENV)
    path = Path(out)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


class PartialMarker:
    """Touch <out>/<command>.partial while a command writes outputs."""

    def __init__(self, out_dir, command):
        self.path = out_dir / f"{command}.partial"

    def __enter__(self):
        self.path.write_text("in progress\n")
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None and self.path.exists():
            self.path.unlink()
        return False


def _log(out_dir, message):
    with open(out_dir / "run.log", "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%d %H:%M:%S')} {message}\n")


def _build_guard(d):
    try:
        return GuardMode.from_dict(d)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"bad guard config: {exc}")


def _build_poison_spec(cfg_poison):
    kind = cfg_poison.get("kind", "feature_shift")
    if kind == "ball":
        raise UsageError("feature-shift poison spec requested but config kind is 'ball'")
    try:
        shift = np.asarray(cfg_poison["shift"], dtype=np.float64)
        bounds = np.asarray(
            cfg_poison.get("bounds", [[-1.0, 1.0]] * shift.size), dtype=np.float64
        )
        return PoisonSpec(
            trigger=Trigger(shift, bounds),
            w=int(cfg_poison["w"]),
            guard=_build_guard(cfg_poison["guard"]),
            target=int(cfg_poison.get("target", 0)),
            rate=float(cfg_poison.get("rate", 0.05)),
            mode=cfg_poison.get("mode", "all_to_one"),
            selection=cfg_poison.get("selection", "fps"),
            selection_seed=int(cfg_poison.get("selection_seed", 0)),
        )
    except KeyError as exc:
        raise UsageError(f"poison config missing key: {exc}")
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad poison config: {exc}")


def _build_pipeline(d):
    if d is None:
        return None
    try:
        return Pipeline.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad pipeline config: {exc}")


def _build_train_config(cfg_train, seed):
    try:
        return TrainConfig(
            epochs=int(cfg_train.get("epochs", 30)),
            batch_size=int(cfg_train.get("batch_size", 32)),
            lr=float(cfg_train.get("lr", 0.05)),
            momentum=float(cfg_train.get("momentum", 0.9)),
            adaptive=bool(cfg_train.get("adaptive", False)),
            decay_every=int(cfg_train.get("decay_every", 0)),
            decay_factor=float(cfg_train.get("decay_factor", 0.5)),
            seed=int(cfg_train.get("seed", seed)),
            pipeline=_build_pipeline(cfg_train.get("pipeline")),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad train config: {exc}")


def _load_pcbd(path):
    if not Path(path).exists():
        raise UsageError(f"input dataset not found: {path}")
    try:
        return data.load_dataset(path)
    except FormatError as exc:
        raise DataError(str(exc))


def _load_ckpt(path):
    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return model.load_checkpoint(path)
    except ValueError as exc:
        raise DataError(str(exc))


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# dataset sources
# ---------------------------------------------------------------------------


def _ingest_dir(root, loader, spec_n, c):
    """Class subdirectories (named by integer label) of cloud files."""
    root = Path(root)
    if not root.is_dir():
        raise UsageError(f"dataset directory not found: {root}")
    clouds = []
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)
    if not class_dirs:
        raise DataError(f"{root}: no class subdirectories")
    for d in class_dirs:
        try:
            label = int(d.name)
        except ValueError:
            raise DataError(f"{root}: class directory {d.name!r} is not an integer label")
        for f in sorted(d.iterdir()):
            cloud = loader(f)
            cloud = center_and_scale(resample(cloud, spec_n, seed=0))
            clouds.append(LabeledCloud(cloud, label))
    K = max(lc.label for lc in clouds) + 1
    return Dataset(clouds, K=K, c=c, n=spec_n)


def _gen_datasets(cfg_dataset, seed):
    kind = cfg_dataset.get("kind", "synthetic")
    if kind == "synthetic":
        try:
            spec = SyntheticSpec.from_dict(cfg_dataset)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad synthetic dataset config: {exc}")
        return data.gen_synthetic(spec, seed)
    if kind == "xyzf_dir":
        c = int(cfg_dataset.get("c", 1))
        n = int(cfg_dataset.get("n", 256))
        try:
            train = _ingest_dir(cfg_dataset["train_dir"], lambda p: data.load_xyzfeat_binary(p, c), n, c)
            test = _ingest_dir(cfg_dataset["test_dir"], lambda p: data.load_xyzfeat_binary(p, c), n, c)
        except KeyError as exc:
            raise UsageError(f"xyzf_dir dataset config missing key: {exc}")
        except FormatError as exc:
            raise DataError(str(exc))
        return train, test
    if kind == "off_dir":
        n = int(cfg_dataset.get("n", 256))
        try:
            train = _ingest_dir(cfg_dataset["train_dir"], lambda p: data.load_off_with_normals(p, n, seed=0), n, 3)
            test = _ingest_dir(cfg_dataset["test_dir"], lambda p: data.load_off_with_normals(p, n, seed=0), n, 3)
        except KeyError as exc:
            raise UsageError(f"off_dir dataset config missing key: {exc}")
        except FormatError as exc:
            raise DataError(str(exc))
        return train, test
    raise UsageError(f"unknown dataset kind: {kind!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(cfg, args):
    cfg_dataset = _require(cfg, "dataset", "gen")
    seed = _seed_for(cfg, args, "gen")
    out = _out_dir(cfg, args)
    train, test = _gen_datasets(cfg_dataset, seed)
    with PartialMarker(out, "gen"):
        data.save_dataset(train, out / "train.pcbd")
        data.save_dataset(test, out / "test.pcbd")
    _log(out, f"gen seed={seed} train={len(train)} test={len(test)}")
    print(f"wrote {out / 'train.pcbd'} ({len(train)} clouds), {out / 'test.pcbd'} ({len(test)} clouds)")
    return EXIT_OK


def cmd_poison(cfg, args):
    cfg_poison = _require(cfg, "poison", "poison")
    seed = _seed_for(cfg, args, "poison")
    out = _out_dir(cfg, args)
    kind = cfg_poison.get("kind", "feature_shift")
    if kind == "ball":
        spec = BallSpec.from_dict(cfg_poison)
    else:
        spec = _build_poison_spec(cfg_poison)
    dataset = _load_pcbd(args.data)
    try:
        if kind == "ball":
            poisoned, indices = poison.poison_dataset_ball(dataset, spec, seed)
        else:
            poisoned, indices = poison.poison_dataset(dataset, spec, seed)
    except ValueError as exc:
        raise DataError(str(exc))
    with PartialMarker(out, "poison"):
        data.save_dataset(poisoned, out / "poisoned.pcbd")
        _write_json(out / "poison_meta.json", poisoned.poison_meta)
    _log(out, f"poison seed={seed} kind={kind} M={len(indices)}")
    print(f"wrote {out / 'poisoned.pcbd'} with {len(indices)} poisoned clouds")
    return EXIT_OK


def cmd_train(cfg, args):
    cfg_train = _require(cfg, "train", "train")
    seed = _seed_for(cfg, args, "train")
    out = _out_dir(cfg, args)
    tc = _build_train_config(cfg_train, seed)
    dataset = _load_pcbd(args.data)
    h = int(cfg_train.get("hidden", 64))
    params = model.init_params(dataset.c, dataset.K, h=h, seed=tc.seed)
    trained, history = model.train(params, dataset, tc)
    with PartialMarker(out, "train"):
        model.save_checkpoint(trained, out / "checkpoint.pcck")
        _write_csv(
            out / "history.csv",
            ["epoch", "loss", "acc"],
            [(e, f"{l:.12g}", f"{a:.12g}") for e, (l, a) in enumerate(history)],
        )
    _log(out, f"train seed={tc.seed} epochs={tc.epochs} final_loss={history[-1][0]:.6f}")
    print(f"wrote {out / 'checkpoint.pcck'}; final epoch loss {history[-1][0]:.4f}, acc {history[-1][1]:.4f}")
    return EXIT_OK


def _asr_for_config(params, test, cfg_poison):
    kind = cfg_poison.get("kind", "feature_shift")
    if kind == "ball":
        spec = BallSpec.from_dict(cfg_poison)

        def implant_fn(cloud, index):
            return poison.implant_ball_trigger(cloud, spec.center, spec.radius, spec.count, seed=(0, index))

        return model.evaluate_asr_fn(params, test, implant_fn, lambda y: spec.target, skip_label=spec.target)
    return model.evaluate_asr(params, test, _build_poison_spec(cfg_poison))


def cmd_eval(cfg, args):
    out = _out_dir(cfg, args)
    params = _load_ckpt(args.ckpt)
    test = _load_pcbd(args.test)
    metrics = {"acc": model.evaluate_acc(params, test)}
    if "poison" in cfg:
        metrics["asr"] = _asr_for_config(params, test, cfg["poison"])
    with PartialMarker(out, "eval"):
        _write_json(out / "metrics.json", metrics)
    _log(out, f"eval acc={metrics['acc']:.4f} asr={metrics.get('asr', float('nan')):.4f}")
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_search(cfg, args):
    cfg_search = _require(cfg, "search", "search")
    cfg_poison = _require(cfg, "poison", "search")
    seed = _seed_for(cfg, args, "search")
    out = _out_dir(cfg, args)
    dataset = _load_pcbd(args.data)
    template = _build_poison_spec(cfg_poison)
    bounds = np.asarray(cfg_search.get("bounds", template.trigger.bounds.tolist()), dtype=np.float64)
    pre_epochs = int(cfg_search.get("pretrain_epochs", 10))
    h = int(cfg.get("train", {}).get("hidden", 64))
    base = model.init_params(dataset.c, dataset.K, h=h, seed=seed)
    if pre_epochs > 0:
        base, _ = model.train(
            base, dataset,
            TrainConfig(epochs=pre_epochs, batch_size=int(cfg_search.get("batch_size", 32)),
                        lr=float(cfg_search.get("lr", 0.05)), seed=seed),
        )
    config = bo.BOConfig(
        bounds=bounds,
        init_count=int(cfg_search.get("init_count", 4)),
        iterations=int(cfg_search.get("iterations", 15)),
        lam=float(cfg_search.get("lambda", 0.1)),
        seed=seed,
        surrogate=bo.SurrogateConfig(
            base_params=base,
            epochs=int(cfg_search.get("surrogate_epochs", 5)),
            batch_size=int(cfg_search.get("batch_size", 32)),
            lr=float(cfg_search.get("lr", 0.05)),
            train_seed=seed,
            poison_seed=seed,
        ),
    )
    try:
        best, trace = bo.search_trigger(config, dataset, template)
    except FloatingPointError as exc:
        raise TrainingError(str(exc))
    rows = []
    running = float("inf")
    for it, (s, value) in enumerate(trace):
        running = min(running, value)
        penalty = config.lam * float(np.abs(s).sum())
        rows.append(
            [it, *[f"{v:.12g}" for v in s], f"{value:.12g}", f"{penalty:.12g}", f"{running:.12g}"]
        )
    with PartialMarker(out, "search"):
        _write_csv(
            out / "trace.csv",
            ["iteration", *[f"s{j}" for j in range(bounds.shape[0])], "objective", "penalty", "running_best"],
            rows,
        )
        _write_json(out / "best_trigger.json", {"shift": [float(v) for v in best]})
    _log(out, f"search seed={seed} evals={len(trace)} best={min(r for _, r in trace):.6f}")
    print(f"best trigger {[round(float(v), 6) for v in best]}; trace at {out / 'trace.csv'}")
    return EXIT_OK


def cmd_defend(cfg, args):
    out = _out_dir(cfg, args)
    cfg_defend = cfg.get("defend", {})
    ran_any = False
    if args.sweep:
        ran_any = True
        _defend_sweep(cfg, args, out)
    if args.strip:
        ran_any = True
        _defend_strip(cfg, args, out, cfg_defend.get("strip", {}))
    if args.spectral:
        ran_any = True
        _defend_spectral(cfg, args, out, cfg_defend.get("spectral", {}))
    if args.adaptive:
        ran_any = True
        _defend_adaptive(cfg, args, out, cfg_defend.get("adaptive", {}))
    if not ran_any:
        raise UsageError("defend: pass at least one of --sweep/--strip/--spectral/--adaptive")
    return EXIT_OK


def _defend_sweep(cfg, args, out):
    cfg_poison = _require(cfg, "poison", "defend --sweep")
    cfg_train = _require(cfg, "train", "defend --sweep")
    seed = _seed_for(cfg, args, "defend")
    train_set = _load_pcbd(args.data)
    test_set = _load_pcbd(args.test)
    cfg_sweep = cfg.get("defend", {}).get("sweep", {})
    ops = full_defense_ops()
    shift_spec = _build_poison_spec(cfg_poison)
    ball_cfg = cfg_sweep.get("ball")
    ball_spec = BallSpec.from_dict(ball_cfg) if ball_cfg else None
    try:
        shift_poisoned, _ = poison.poison_dataset(train_set, shift_spec, seed)
        ball_poisoned = (
            poison.poison_dataset_ball(train_set, ball_spec, seed)[0] if ball_spec else None
        )
    except ValueError as exc:
        raise DataError(str(exc))
    header = ["row", "ops", "acc_shift", "asr_shift"]
    if ball_spec:
        header += ["acc_ball", "asr_ball"]
    rows = []
    for length in range(len(ops) + 1):
        pipeline = Pipeline(ops[:length], seed=int(cfg_train.get("pipeline_seed", seed)))
        tc = _build_train_config({**cfg_train, "pipeline": None}, seed)
        tc.pipeline = pipeline if length > 0 else None
        h = int(cfg_train.get("hidden", 64))
        params = model.init_params(train_set.c, train_set.K, h=h, seed=tc.seed)
        trained, _ = model.train(params, shift_poisoned, tc)
        row = [
            length,
            "+".join(op.kind for op in ops[:length]) or "none",
            f"{model.evaluate_acc(trained, test_set):.12g}",
            f"{model.evaluate_asr(trained, test_set, shift_spec):.12g}",
        ]
        if ball_spec:
            bparams = model.init_params(train_set.c, train_set.K, h=h, seed=tc.seed)
            btrained, _ = model.train(bparams, ball_poisoned, tc)

            def implant_fn(cloud, index):
                return poison.implant_ball_trigger(
                    cloud, ball_spec.center, ball_spec.radius, ball_spec.count, seed=(0, index)
                )

            row += [
                f"{model.evaluate_acc(btrained, test_set):.12g}",
                f"{model.evaluate_asr_fn(btrained, test_set, implant_fn, lambda y: ball_spec.target, skip_label=ball_spec.target):.12g}",
            ]
        rows.append(row)
    with PartialMarker(out, "defend"):
        _write_csv(out / "sweep.csv", header, rows)
    _log(out, f"defend sweep seed={seed} rows={len(rows)}")
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")


def _defend_strip(cfg, args, out, opts):
    cfg_poison = _require(cfg, "poison", "defend --strip")
    seed = _seed_for(cfg, args, "defend")
    params = _load_ckpt(args.ckpt)
    test_set = _load_pcbd(args.test)
    overlays = int(opts.get("overlays", 8))
    n_suspects = int(opts.get("suspects", 100))
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x57717)))
    kind = cfg_poison.get("kind", "feature_shift")
    if kind == "ball":
        spec = BallSpec.from_dict(cfg_poison)
        implant_fn = lambda cloud, i: poison.implant_ball_trigger(
            cloud, spec.center, spec.radius, spec.count, seed=(0, i)
        )
        target = spec.target
    else:
        spec = _build_poison_spec(cfg_poison)
        implant_fn = lambda cloud, i: poison.implant_trigger(cloud, spec)
        target = spec.target
    eligible = [lc for lc in test_set.clouds if lc.label != target]
    pool = [lc.cloud for lc in test_set.clouds]
    scores, flags = [], []
    for i, lc in enumerate(eligible[:n_suspects]):
        scores.append(defenses.strip_score(params, implant_fn(lc.cloud, i), pool, overlays, rng))
        flags.append(True)
    for lc in eligible[:n_suspects]:
        scores.append(defenses.strip_score(params, lc.cloud, pool, overlays, rng))
        flags.append(False)
    report = defenses.detection_report(
        np.array(scores), np.array(flags),
        flag_frac=float(opts.get("flag_frac", 0.15)), suspicious="low",
    )
    with PartialMarker(out, "defend"):
        _write_json(out / "strip_report.json", report.to_dict())
        _write_csv(
            out / "strip_scores.csv", ["index", "entropy", "poisoned"],
            [(i, f"{s:.12g}", int(f)) for i, (s, f) in enumerate(zip(scores, flags))],
        )
    _log(out, f"defend strip auc={report.auc:.4f}")
    print(f"strip AUC {report.auc:.4f}; wrote {out / 'strip_report.json'}")


def _defend_spectral(cfg, args, out, opts):
    params = _load_ckpt(args.ckpt)
    dataset = _load_pcbd(args.data)
    if dataset.poison_meta is None:
        raise DataError("spectral defense needs a poisoned dataset with metadata")
    flags = np.zeros(len(dataset), dtype=bool)
    flags[np.array(dataset.poison_meta["indices"], dtype=int)] = True
    scores = defenses.spectral_scores(params, [lc.cloud for lc in dataset.clouds])
    report = defenses.detection_report(
        scores, flags, flag_frac=float(opts.get("flag_frac", 0.15)), suspicious="high"
    )
    with PartialMarker(out, "defend"):
        _write_json(out / "spectral_report.json", report.to_dict())
        _write_csv(
            out / "spectral_scores.csv", ["index", "score", "poisoned"],
            [(i, f"{s:.12g}", int(f)) for i, (s, f) in enumerate(zip(scores, flags))],
        )
    _log(out, f"defend spectral auc={report.auc:.4f}")
    print(f"spectral AUC {report.auc:.4f}; wrote {out / 'spectral_report.json'}")


def _defend_adaptive(cfg, args, out, opts):
    cfg_poison = _require(cfg, "poison", "defend --adaptive")
    seed = _seed_for(cfg, args, "defend")
    params = _load_ckpt(args.ckpt)
    test_set = _load_pcbd(args.test)
    sigma = float(opts.get("sigma", 0.1))
    spec = _build_poison_spec(cfg_poison)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xADA9)))

    def noisy(cloud):
        return defenses.adaptive_noise(cloud, sigma, spec.guard, rng)

    noised = Dataset(
        [LabeledCloud(noisy(lc.cloud), lc.label) for lc in test_set.clouds],
        K=test_set.K, c=test_set.c, n=test_set.n,
    )
    acc = model.evaluate_acc(params, noised)

    def implant_fn(cloud, index):
        return noisy(poison.implant_trigger(cloud, spec))

    asr = model.evaluate_asr_fn(
        params, test_set, implant_fn, lambda y: spec.target, skip_label=spec.target
    )
    with PartialMarker(out, "defend"):
        _write_json(out / "adaptive_report.json", {"sigma": sigma, "acc": acc, "asr": asr})
    _log(out, f"defend adaptive sigma={sigma} acc={acc:.4f} asr={asr:.4f}")
    print(f"adaptive defense sigma={sigma}: acc {acc:.4f}, asr {asr:.4f}")


def cmd_report(cfg, args):
    out = _out_dir(cfg, args)
    runs = Path(args.runs) if args.runs else out
    if not runs.exists():
        raise UsageError(f"runs directory not found: {runs}")
    rows = []
    for metrics_path in sorted(runs.rglob("metrics.json")):
        with open(metrics_path) as fh:
            m = json.load(fh)
        rows.append([str(metrics_path.parent.relative_to(runs)), "eval",
                     f"{m.get('acc', '')}", f"{m.get('asr', '')}"])
    for sweep_path in sorted(runs.rglob("sweep.csv")):
        with open(sweep_path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rows.append([
                    str(sweep_path.parent.relative_to(runs)),
                    f"sweep[{row['ops']}]",
                    row.get("acc_shift", ""), row.get("asr_shift", ""),
                ])
    with PartialMarker(out, "report"):
        _write_csv(out / "report.csv", ["run", "configuration", "acc", "asr"], rows)
    print(f"wrote {out / 'report.csv'} ({len(rows)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="featback",
        description="Feature-shift backdoor laboratory for 3D point clouds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data_in=False, test_in=False, ckpt_in=False):
        p.add_argument("-c", "--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the config out_dir")
        if data_in:
            p.add_argument("--data", required=True, help="input .pcbd dataset")
        if test_in:
            p.add_argument("--test", required=True, help="clean test .pcbd dataset")
        if ckpt_in:
            p.add_argument("--ckpt", required=True, help="model checkpoint (.pcck)")

    common(sub.add_parser("gen", help="generate or ingest a dataset"))
    common(sub.add_parser("poison", help="write a poisoned dataset"), data_in=True)
    common(sub.add_parser("train", help="train a classifier"), data_in=True)
    common(sub.add_parser("eval", help="ACC/ASR of a checkpoint"), test_in=True, ckpt_in=True)
    common(sub.add_parser("search", help="Bayesian trigger search"), data_in=True)
    defend = sub.add_parser("defend", help="defense evaluations")
    common(defend)
    defend.add_argument("--data", help=".pcbd dataset (sweep: clean train; spectral: poisoned)")
    defend.add_argument("--test", help="clean test .pcbd dataset")
    defend.add_argument("--ckpt", help="model checkpoint (.pcck)")
    defend.add_argument("--sweep", action="store_true", help="cumulative preprocessing sweep")
    defend.add_argument("--strip", action="store_true", help="superimposition entropy report")
    defend.add_argument("--spectral", action="store_true", help="latent spectral report")
    defend.add_argument("--adaptive", action="store_true", help="feature-noise defense report")
    report = sub.add_parser("report", help="aggregate run outputs into one CSV")
    common(report)
    report.add_argument("--runs", help="directory to scan (default: out_dir)")
    return parser


HANDLERS = {
    "gen": cmd_gen,
    "poison": cmd_poison,
    "train": cmd_train,
    "eval": cmd_eval,
    "search": cmd_search,
    "defend": cmd_defend,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        cfg = load_config(args.config)
        _check_defend_inputs(args)
        return HANDLERS[args.command](cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _check_defend_inputs(args):
    if args.command != "defend":
        return
    if args.sweep and not (args.data and args.test):
        raise UsageError("defend --sweep needs --data (clean train) and --test")
    if args.strip and not (args.ckpt and args.test):
        raise UsageError("defend --strip needs --ckpt and --test")
    if args.spectral and not (args.ckpt and args.data):
        raise UsageError("defend --spectral needs --ckpt and --data (poisoned)")
    if args.adaptive and not (args.ckpt and args.test):
        raise UsageError("defend --adaptive needs --ckpt and --test")


if __name__ == "__main__":
    sys.exit(main())
