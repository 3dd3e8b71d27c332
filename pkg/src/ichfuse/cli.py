"""Command-line pipeline.

Subcommands::

    prep      threshold, crop and resize PGM slices
    select    PCA reduction + Shapley screening of a feature table
    train     fit a boosted network ensemble on a labelled feature table
    predict   per-slice confidence map from a trained ensemble
    fuse      scan-level fusion of a confidence map
    eval      score scan (or slice) predictions against labels
    synth     write a seeded synthetic confidence map (and features)
    oracle    compare fast fusion with subset enumeration on small scans
    fig6      generate -> fuse four ways -> tabulate

Each run computes all of its outputs before touching the output directory,
then writes every file under a temporary name and renames it into place.  A
``<command>.manifest.json`` records the effective configuration, its hash,
the seed, input and output checksums and library versions.  Its
``timestamp`` is the only field that differs between identical runs.

Configuration comes from an optional JSON document (``--config``) with
sections ``synth``, ``fusion``, ``train``, ``select``, ``prep``, plus a
top-level ``seed`` and ``classes``; command-line flags override it.  The log
level is read from ``ICHFUSE_LOG_LEVEL``.

Exit status: 0 on success, 1 on data errors (a JSON report goes to stderr),
2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import hashlib
import io
import json
import logging
import os
import platform
import sys
import tempfile
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .boostnet import BoostEnsemble, TrainConfig, ensemble_proba, predict_map, train_boost_table
from .confmap import (
    DEFAULT_CLASSES,
    Dataset,
    DatasetFormatError,
    LabelSpace,
    dumps_csv,
    loads_csv,
    loads_json,
    slice_problems,
    validate_dataset,
)
from .featsel import (
    EXACT_MAX_FEATURES,
    dumps_table,
    loads_table,
    reduce_features,
    shapley_importance,
)
from .fusion import FusionConfig, LearnedFusion, choquet_fuse, fuse_baseline, grid_search_lambda
from .imgprep import decode_pgm, encode_pgm, preprocess_slice
from .metrics import evaluate
from .synth import (
    ORACLE_MAX_SLICES,
    SynthConfig,
    fig6_config,
    generate_confidence_dataset,
    generate_feature_dataset,
    oracle_check,
    small_scan_config,
)

logger = logging.getLogger("ichfuse")

LOG_ENV = "ICHFUSE_LOG_LEVEL"
DEFAULT_SEED = 42
CONFIG_KEYS = {"seed", "classes", "synth", "fusion", "train", "select", "prep"}
SELECT_DEFAULTS = {"k": 50, "threshold": 0.01, "mode": "auto", "samples": 1000, "explain": 100}
PREP_DEFAULTS = {"size": 224}
PRESETS = {"fig6": fig6_config, "default": lambda seed: SynthConfig(seed=seed), "oracle": small_scan_config}


class UsageError(Exception):
    pass


class DataError(Exception):
    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


# ------------------------------------------------------------- plumbing


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


class Run:
    """Collects inputs and outputs of one invocation and commits them atomically."""

    def __init__(self, command: str, out: str, config: dict, seed: int):
        self.command = command
        self.out = Path(out)
        self.config = config
        self.seed = seed
        self.inputs: dict[str, str] = {}
        self.artifacts: dict[str, bytes] = {}
        self.results: dict = {}

    def read(self, path) -> bytes:
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read input: {exc.strerror}", path=str(path)) from None
        self.inputs[str(path)] = _sha256(data)
        return data

    def read_text(self, path) -> str:
        try:
            return self.read(path).decode("utf-8")
        except UnicodeDecodeError:
            raise DataError("input is not UTF-8 text", path=str(path)) from None

    def add(self, name: str, data):
        if name in self.artifacts:
            raise DataError("two outputs map to the same file name", name=name)
        self.artifacts[name] = data.encode("utf-8") if isinstance(data, str) else bytes(data)

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "config_sha256": _sha256(json.dumps(self.config, sort_keys=True, default=_json_default).encode()),
            "seed": self.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {k: _sha256(v) for k, v in sorted(self.artifacts.items())},
            "results": self.results,
            "versions": {
                "ichfuse": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        }

    def commit(self):
        self.out.mkdir(parents=True, exist_ok=True)
        files = dict(self.artifacts)
        files[f"{self.command}.manifest.json"] = dump_json(self.manifest()).encode("utf-8")
        staged = []
        try:
            for name, data in files.items():
                fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.out)
                with os.fdopen(fd, "wb") as fp:
                    fp.write(data)
                staged.append((tmp, self.out / name))
        except BaseException:
            for tmp, _ in staged:
                os.unlink(tmp)
            raise
        for tmp, final in staged:
            os.replace(tmp, final)
        for name in sorted(files):
            logger.info("wrote %s", self.out / name)


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fp:
            cfg = json.load(fp)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _overrides(args, mapping: dict) -> dict:
    """``{config_field: value}`` for flags that were given on the command line."""
    return {field: getattr(args, flag) for flag, field in mapping.items() if getattr(args, flag, None) is not None}


def _build(cls, section: dict, overrides: dict, **fixed):
    values = {**section, **overrides, **fixed}
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {cls.__name__}: {exc}") from None


def _plain(section: dict, defaults: dict, overrides: dict, name: str) -> dict:
    unknown = set(section) - set(defaults)
    if unknown:
        raise UsageError(f"unknown keys in {name!r} config: {sorted(unknown)}")
    return {**defaults, **section, **overrides}


def _seed(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", DEFAULT_SEED)
    if not isinstance(seed, int) or seed < 0:
        raise UsageError("seed must be a nonnegative integer")
    return seed


def _label_space(cfg) -> LabelSpace:
    try:
        return LabelSpace(tuple(cfg.get("classes", DEFAULT_CLASSES)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _csv_lines(text: str) -> dict:
    """Map ``(scan_id, slice_id)`` to its 1-based line number in a CSV."""
    lines = {}
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if lineno > 1 and len(row) >= 2:
            lines.setdefault((row[0], row[1]), lineno)
    return lines


def _read_map(run: Run, path, validate=True) -> Dataset:
    text = run.read_text(path)
    try:
        d = loads_json(text) if str(path).endswith(".json") else loads_csv(text)
    except (DatasetFormatError, json.JSONDecodeError) as exc:
        raise DataError("unreadable confidence map", path=str(path), reason=str(exc)) from None
    if validate:
        lines = {} if str(path).endswith(".json") else _csv_lines(text)
        rows = []
        for scan in d.scans:
            for sl in scan.slices:
                for problem in slice_problems(sl.confidence, d.label_space.C):
                    rows.append({"line": lines.get((scan.scan_id, sl.slice_id)), "scan_id": scan.scan_id,
                                 "slice_id": sl.slice_id, "problem": problem})
        if rows or validate_dataset(d):
            raise DataError("invalid confidence map", path=str(path), rows=rows, violations=validate_dataset(d))
    return d


def _read_table(run: Run, path):
    try:
        return loads_table(run.read_text(path))
    except (ValueError, StopIteration) as exc:
        raise DataError("unreadable feature table", path=str(path), reason=str(exc)) from None


def _fmt(x) -> str:
    return repr(float(x))


# ------------------------------------------------------------ subcommands


def cmd_synth(args, cfg) -> int:
    seed = _seed(args, cfg)
    base = PRESETS[args.preset](seed)
    over = _overrides(args, {"scale": "scale"})
    sc = _build(SynthConfig, {**dataclasses.asdict(base), **cfg.get("synth", {})}, over, seed=seed)
    run = Run("synth", args.out, {"preset": args.preset, "synth": sc.to_json()}, seed)
    d = generate_confidence_dataset(sc)
    run.add("confidence_map.csv", dumps_csv(d))
    if args.features:
        run.add("features.csv", dumps_table(generate_feature_dataset(sc)))
    run.results = {"scans": len(d), "slices": sum(s.n for s in d.scans)}
    run.commit()
    print(f"synthesized {len(d)} scans, {run.results['slices']} slices")
    return 0


def _fusion_config(args, cfg) -> FusionConfig:
    over = _overrides(args, {"mode": "measure", "sort": "sort", "grid_step": "grid_step", "lam": "lam"})
    return _build(FusionConfig, cfg.get("fusion", {}), over)


def cmd_fuse(args, cfg) -> int:
    seed = _seed(args, cfg)
    fc = _fusion_config(args, cfg)
    run = Run("fuse", args.out, {"fusion": dataclasses.asdict(fc), "baseline": args.baseline}, seed)
    d = _read_map(run, args.input)
    classes = d.label_space.classes
    validation = _read_map(run, args.validation) if args.validation else None
    if validation is not None and validation.label_space != d.label_space:
        raise DataError("validation set uses a different label space", path=args.validation)

    if args.baseline:
        model = None
        if args.baseline == "mlp":
            if args.model:
                model = LearnedFusion(BoostEnsemble.loads(run.read_text(args.model)))
            elif validation is not None:
                model = LearnedFusion().fit(validation, LearnedFusion.default_config(seed))
                run.add("learned_fusion.json", model.ensemble.dumps())
            else:
                raise UsageError("--baseline mlp needs --model or a labelled --validation set")
        fused = [fuse_baseline(s, args.baseline, model) for s in d.scans]
    else:
        if fc.measure == "grid" and fc.lam is None:
            if validation is None:
                raise UsageError("grid mode needs --lambda or a labelled --validation set")
            lam = grid_search_lambda(validation, fc)
            fc = dataclasses.replace(fc, lam=lam)
            run.results["grid_lambda"] = lam
            run.config["fusion"] = dataclasses.asdict(fc)
        fused = [choquet_fuse(s, fc) for s in d.scans]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scan_id", *(f"F_{c}" for c in classes), "decision", "lambda", "method"])
    for f in fused:
        lam = "" if f.lam is None else _fmt(f.lam)
        w.writerow([f.scan_id, *(_fmt(v) for v in f.F), classes[f.decision], lam, f.method])
    run.add("fused.csv", buf.getvalue())
    run.results["scans"] = len(fused)
    run.commit()
    print(f"fused {len(fused)} scans")
    return 0


def _read_labels(run: Run, path) -> dict:
    """``scan_id -> label`` from a ``scan_id,label`` CSV or a labelled confidence map."""
    text = run.read_text(path)
    header = next(csv.reader(io.StringIO(text)), [])
    if "slice_id" in header:
        d = _read_map(run, path, validate=False)
        return {s.scan_id: s.true_label for s in d.scans if s.true_label is not None}
    if header[:2] != ["scan_id", "label"]:
        raise DataError("labels CSV needs a scan_id,label header or a labelled confidence map", path=str(path))
    labels = {}
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if lineno == 1 or not row:
            continue
        if len(row) < 2:
            raise DataError("short row in labels CSV", path=str(path), line=lineno)
        labels[row[0]] = row[1]
    return labels


def cmd_eval(args, cfg) -> int:
    seed = _seed(args, cfg)
    run = Run("eval", args.out, {"binary_ll": args.binary_ll}, seed)
    text = run.read_text(args.predictions)
    header = next(csv.reader(io.StringIO(text)), [])
    labels = _read_labels(run, args.labels) if args.labels else None

    if "slice_id" in header:  # slice-level: a confidence map
        d = _read_map(run, args.predictions)
        classes = d.label_space.classes
        y, pred, prob, missing = [], [], [], []
        for scan in d.scans:
            lab = labels.get(scan.scan_id) if labels is not None else scan.true_label
            if lab is None:
                missing.append(scan.scan_id)
                continue
            y += [lab] * scan.n
            pred += list(np.argmax(scan.probs, axis=1))
            prob.append(scan.probs)
        prob = np.vstack(prob) if prob else np.zeros((0, len(classes)))
        level = "slice"
    else:
        fcols = [c for c in header if c.startswith("F_")]
        if header[:1] != ["scan_id"] or "decision" not in header or not fcols:
            raise DataError("predictions CSV needs scan_id, F_<class> and decision columns", path=args.predictions)
        if labels is None:
            raise UsageError("scan-level eval needs --labels")
        classes = tuple(c[2:] for c in fcols)
        rows = list(csv.DictReader(io.StringIO(text)))
        y, pred, prob, missing = [], [], [], []
        for lineno, row in enumerate(rows, start=2):
            if row["scan_id"] not in labels:
                missing.append(row["scan_id"])
                continue
            if row["decision"] not in classes:
                raise DataError("unknown decision class", path=args.predictions, line=lineno)
            try:
                F = np.clip(np.array([float(row[c]) for c in fcols]), 0.0, None)
            except (TypeError, ValueError):
                raise DataError("non-numeric score", path=args.predictions, line=lineno) from None
            y.append(labels[row["scan_id"]])
            pred.append(classes.index(row["decision"]))
            prob.append(F / F.sum() if F.sum() > 0 else np.full(F.size, 1.0 / F.size))
        prob = np.array(prob)
        level = "scan"
    if missing:
        raise DataError("predictions without a label", scan_ids=missing)
    if not y:
        raise DataError("nothing to evaluate")
    unknown = sorted({lab for lab in y if lab not in classes})
    if unknown:
        raise DataError("labels outside the prediction label space", labels=unknown)
    yi = np.array([classes.index(lab) for lab in y])
    report = evaluate(yi, np.array(pred), classes, prob, args.binary_ll)
    obj = report.to_json()
    obj["level"] = level
    run.add("eval.json", dump_json(obj))
    run.add("eval.txt", report.table())
    run.results = {"level": level, "n": report.n, "accuracy": report.classification.accuracy}
    run.commit()
    sys.stdout.write(report.table())
    return 0


def cmd_oracle(args, cfg) -> int:
    seed = _seed(args, cfg)
    if not 1 <= args.max_slices <= ORACLE_MAX_SLICES:
        raise UsageError(f"--max-slices must lie in 1..{ORACLE_MAX_SLICES}")
    run = Run("oracle", args.out, {"tol": args.tol, "max_slices": args.max_slices,
                                   "input": args.input, "preset": None if args.input else args.preset}, seed)
    if args.input:
        d = _read_map(run, args.input)
    else:
        # the preset's distribution, restricted to scans small enough to enumerate
        base = PRESETS[args.preset](seed)
        small = {"min_slices": 1, "max_slices": args.max_slices, "mean_slices": (1 + args.max_slices) / 2}
        sc = _build(SynthConfig, {**dataclasses.asdict(base), **cfg.get("synth", {})}, small, seed=seed)
        run.config["synth"] = sc.to_json()
        d = generate_confidence_dataset(sc)
    checked, mismatches = oracle_check(d, args.tol, args.max_slices)
    run.results = {"scans": len(d), "checked": checked,
                   "mismatches": [{"scan_id": s, "max_abs_diff": v} for s, v in mismatches]}
    run.add("oracle.json", dump_json(run.results))
    if mismatches:
        raise DataError(f"{len(mismatches)} of {checked} scans differ from the oracle by more than {args.tol:g}",
                        mismatches=run.results["mismatches"])
    run.commit()
    print(f"all {checked} scans with n <= {args.max_slices} matched within {args.tol:g}")
    return 0


def cmd_fig6(args, cfg) -> int:
    from .experiment import METHODS, run_fig6

    seed = _seed(args, cfg)
    over = _overrides(args, {"scale": "scale"})
    sc = _build(SynthConfig, {**dataclasses.asdict(fig6_config(seed)), **cfg.get("synth", {})}, over, seed=seed)
    sort = args.sort or cfg.get("fusion", {}).get("sort", "paper")
    run = Run("fig6", args.out, {"synth": sc.to_json(), "sort": sort, "test_fraction": args.test_fraction}, seed)
    try:
        res = run_fig6(sc, args.test_fraction, sort)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    classes = res.test.label_space.classes
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scan_id", "label", *METHODS])
    for i, scan in enumerate(res.test.scans):
        w.writerow([scan.scan_id, scan.true_label, *(classes[res.fused[m][i].decision] for m in METHODS)])
    summary = res.summary()
    run.add("confidence_map.csv", dumps_csv(generate_confidence_dataset(sc)))
    run.add("fig6_predictions.csv", buf.getvalue())
    run.add("fig6_summary.json", dump_json(summary))
    run.add("fig6_table.txt", res.table())
    run.results = {"grid_lambda": res.lam, "fuzzy_accuracy": res.accuracy("fuzzy")}
    run.commit()
    sys.stdout.write(res.table())
    return 0


def _train_config(args, cfg, seed) -> TrainConfig:
    over = _overrides(args, {"epochs": "epochs", "learning_rate": "learning_rate", "batch_size": "batch_size",
                             "components": "n_components", "penalty": "penalty"})
    return _build(TrainConfig, cfg.get("train", {}), over, seed=seed)


def cmd_train(args, cfg) -> int:
    seed = _seed(args, cfg)
    tc = _train_config(args, cfg, seed)
    space = _label_space(cfg)
    run = Run("train", args.out, {"train": dataclasses.asdict(tc), "classes": space.classes}, seed)
    t = _read_table(run, args.input)
    if t.labels is None:
        raise DataError("training table has no label column", path=args.input)
    try:
        e = train_boost_table(t, tc, space)
    except ValueError as exc:
        raise DataError(str(exc), path=args.input) from None
    acc = float(np.mean(np.argmax(ensemble_proba(e, t.X), axis=1) == t.label_indices(space.classes)))
    run.add("model.json", e.dumps())
    run.results = {"training_accuracy": acc, "component_weights": e.alphas.tolist()}
    run.commit()
    print(f"trained {len(e.components)} components; training accuracy {acc:.4f}")
    return 0


def cmd_predict(args, cfg) -> int:
    seed = _seed(args, cfg)
    run = Run("predict", args.out, {}, seed)
    t = _read_table(run, args.input)
    try:
        e = BoostEnsemble.loads(run.read_text(args.model))
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError("unreadable model", path=args.model, reason=str(exc)) from None
    if t.shape[1] != e.x_mean.size:
        raise DataError(f"table has {t.shape[1]} features, model expects {e.x_mean.size}", path=args.input)
    d = predict_map(e, t)
    run.add("confidence_map.csv", dumps_csv(d))
    run.commit()
    print(f"predicted {t.shape[0]} slices in {len(d)} scans")
    return 0


def cmd_select(args, cfg) -> int:
    seed = _seed(args, cfg)
    sel = _plain(cfg.get("select", {}), SELECT_DEFAULTS,
                 _overrides(args, {"k": "k", "threshold": "threshold", "shap_mode": "mode",
                                   "samples": "samples", "explain": "explain"}), "select")
    if sel["mode"] not in ("auto", "exact", "montecarlo"):
        raise UsageError("--mode must be auto, exact or montecarlo")
    tc = _train_config(args, cfg, seed)
    space = _label_space(cfg)
    run = Run("select", args.out, {"select": sel, "train": dataclasses.asdict(tc)}, seed)
    t = _read_table(run, args.input)
    if t.labels is None:
        raise DataError("screening needs a labelled feature table", path=args.input)
    try:
        pca, z = reduce_features(t, int(sel["k"]))
        e = train_boost_table(z, tc, space)
    except ValueError as exc:
        raise DataError(str(exc), path=args.input) from None
    mode = sel["mode"]
    if mode == "auto":
        mode = "exact" if pca.k <= EXACT_MAX_FEATURES else "montecarlo"
    rng = np.random.default_rng([seed, 4])
    m = min(int(sel["explain"]), z.shape[0])
    explain = z.rows(np.sort(rng.choice(z.shape[0], size=m, replace=False)))
    try:
        report = shapley_importance(lambda X: ensemble_proba(e, X), explain, z, mode,
                                    int(sel["samples"]), seed, float(sel["threshold"]))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    run.add("pca.json", dump_json(pca.to_json()))
    run.add("features_pca.csv", dumps_table(z))
    run.add("importance.json", dump_json(report.to_json()))
    run.add("features_selected.csv", dumps_table(z.select(report.selected)) if report.selected else "")
    run.results = {"k": pca.k, "mode": mode, "selected": report.selected}
    run.commit()
    print(f"{len(report.selected)} of {pca.k} components selected: {', '.join(report.selected)}")
    return 0


def _prep_inputs(run: Run, paths) -> list[Path]:
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            found += sorted(p.glob("*.pgm"))
        elif p.suffix.lower() == ".pgm":
            found.append(p)
        else:  # listing file, one path per line, relative to the listing
            for line in run.read_text(p).splitlines():
                line = line.strip()
                if line and not line.startswith("#"):
                    q = Path(line)
                    found.append(q if q.is_absolute() else p.parent / q)
    if not found:
        raise DataError("no PGM inputs found", paths=[str(p) for p in paths])
    return found


def cmd_prep(args, cfg) -> int:
    from .imgprep import DegenerateHistogramError, NoForegroundError

    seed = _seed(args, cfg)
    prep = _plain(cfg.get("prep", {}), PREP_DEFAULTS, _overrides(args, {"size": "size"}), "prep")
    if int(prep["size"]) < 1:
        raise UsageError("--size must be positive")
    run = Run("prep", args.out, {"prep": prep}, seed)
    for path in _prep_inputs(run, args.inputs):
        try:
            img = decode_pgm(run.read(path))
            out = preprocess_slice(img, int(prep["size"]))
        except (ValueError, DegenerateHistogramError, NoForegroundError) as exc:
            raise DataError(str(exc), path=str(path)) from None
        run.add(path.name, encode_pgm(out))
    run.commit()
    print(f"preprocessed {len(run.artifacts)} slices")
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document; flags override it")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, help=f"global seed (default {DEFAULT_SEED})")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int)
    training.add_argument("--learning-rate", type=float, dest="learning_rate")
    training.add_argument("--batch-size", type=int, dest="batch_size")
    training.add_argument("--components", type=int, help="number of boosted networks")
    training.add_argument("--penalty", type=float, help="L2 weight penalty")

    p = argparse.ArgumentParser(prog="ichfuse", description="Scan-level fusion pipeline for slice-wise classifiers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("prep", parents=[common], help="threshold, crop and resize PGM slices")
    s.add_argument("inputs", nargs="+", help="PGM files, directories of PGMs, or text listings of PGM paths")
    s.add_argument("--size", type=int, help="output side length (default 224)")
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("select", parents=[common, training], help="PCA + Shapley feature screening")
    s.add_argument("input", help="labelled feature CSV")
    s.add_argument("--k", type=int, help="principal components to keep (default 50, clamped to rank)")
    s.add_argument("--threshold", type=float, help="minimum importance share (strict, default 0.01)")
    s.add_argument("--mode", dest="shap_mode", choices=("auto", "exact", "montecarlo"))
    s.add_argument("--samples", type=int, help="permutations per sample in montecarlo mode")
    s.add_argument("--explain", type=int, help="rows whose Shapley values are averaged")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("train", parents=[common, training], help="train the boosted network ensemble")
    s.add_argument("input", help="labelled feature CSV")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="per-slice confidence map from a trained ensemble")
    s.add_argument("input", help="feature CSV")
    s.add_argument("--model", required=True, help="model.json written by train")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("fuse", parents=[common], help="fuse slice confidences into scan decisions")
    s.add_argument("input", help="confidence-map CSV or JSON")
    s.add_argument("--mode", choices=("exact", "grid"), help="lambda from the normalization root or a grid")
    s.add_argument("--sort", choices=("paper", "classical"))
    s.add_argument("--grid-step", type=float, dest="grid_step")
    s.add_argument("--lambda", type=float, dest="lam", help="fixed lambda for grid mode")
    s.add_argument("--validation", help="labelled confidence map for grid search or learned fusion")
    s.add_argument("--baseline", choices=("mean", "mv", "mlp"), help="use a reference rule instead")
    s.add_argument("--model", help="learned-fusion model JSON for --baseline mlp")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("eval", parents=[common], help="score predictions against labels")
    s.add_argument("predictions", help="fused.csv (scan level) or a confidence map (slice level)")
    s.add_argument("--labels", help="scan_id,label CSV or a labelled confidence map")
    s.add_argument("--binary-ll", action="store_true", dest="binary_ll",
                   help="one-vs-rest log-likelihood instead of the multinomial one")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic confidence map")
    s.add_argument("--preset", choices=sorted(PRESETS), default="fig6")
    s.add_argument("--scale", type=float, help="multiplier on the per-class scan counts")
    s.add_argument("--features", action="store_true", help="also write a planted-signal feature table")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("oracle", parents=[common], help="check fusion against subset enumeration")
    s.add_argument("input", nargs="?", help="confidence map (default: small-scan variant of --preset)")
    s.add_argument("--preset", choices=sorted(PRESETS), default="fig6")
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--max-slices", type=int, default=6, dest="max_slices")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("fig6", parents=[common], help="four-way fusion comparison on the synthetic preset")
    s.add_argument("--scale", type=float)
    s.add_argument("--sort", choices=("paper", "classical"))
    s.add_argument("--test-fraction", type=float, default=0.2, dest="test_fraction")
    s.set_defaults(func=cmd_fig6)
    return p


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, _load_config(args.config))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ichfuse {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        report = {"error": str(exc), "command": args.command, **exc.details}
        sys.stderr.write(dump_json(report))
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
