"""Command-line interface.

Every command writes ``manifest.json`` next to its outputs.  The manifest
holds the fully resolved inputs and configuration plus SHA-256 hashes of
all outputs, and ``bigantax replay`` re-executes a run from it.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bigan import Alignment, BiGanModel, TrainConfig, train
from .errors import BiganTaxError, ConfigError, DataError, NumericError
from .features import (DEFAULT_MIN_MONTHS, derive_all, feature_matrix, load_features,
                       load_returns, normalize, write_features, write_returns, write_stats)
from .scoring import iqr_gate, roc_auc, score
from .synth import SynthConfig, generate, load_labels, write_labels

log = logging.getLogger("bigantax")

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_json(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return doc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(arg: str | None, command: str) -> Path:
    if arg:
        out = Path(arg)
    else:
        out = Path(os.environ.get("BIGAN_OUT_DIR", "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _input(path: str | Path) -> str:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"input file not found: {p}")
    return str(p.resolve())


def _write_manifest(out: Path, command: str, resolved: dict, inputs: dict[str, str],
                    outputs: list[str]) -> dict:
    manifest = {
        "tool": "bigantax",
        "version": __version__,
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "seed": resolved.get("seed"),
        "resolved": resolved,
        "inputs": {k: {"path": v, "sha256": sha256_file(v)} for k, v in inputs.items()},
        "outputs": {name: sha256_file(out / name) for name in outputs},
    }
    _write_json(out / MANIFEST_NAME, manifest)
    return manifest


# --- executors (shared by commands and replay) -----------------------------

def _train_config(resolved: dict) -> TrainConfig:
    return TrainConfig.from_dict(resolved["train"]).validate()


def exec_synth(resolved: dict, out: Path) -> dict:
    cfg = SynthConfig.from_dict(resolved["synth"]).validate()
    ds = generate(cfg)
    write_returns(out / "returns.csv", ds.records)
    write_labels(out / "labels.csv", ds.labels)
    _write_json(out / "config.json", cfg.to_dict())
    log.info("synth: %d taxpayers (%d fraud), %d records",
             len(ds.labels), len(ds.fraud_ids()), len(ds.records))
    return _write_manifest(out, "synth", resolved, {},
                           ["returns.csv", "labels.csv", "config.json"])


def _features_to(out: Path, returns_path: str, min_months: int) -> list[str]:
    records = load_returns(returns_path)
    kept, dropped = derive_all(records, min_months)
    ids = [v.taxpayer_id for v in kept]
    write_features(out / "features.csv", ids, feature_matrix(kept), [v.months_used for v in kept])
    with (out / "excluded.csv").open("w", newline="") as fh:
        fh.write("taxpayer_id,months_used,reason\n")
        for e in dropped:
            fh.write(f"{e.taxpayer_id},{e.months_used},{e.reason}\n")
    written = ["features.csv", "excluded.csv"]
    if kept:
        _, stats = normalize(kept)
        write_stats(out / "normalization.json", stats)
        written.append("normalization.json")
    else:
        log.warning("features: every taxpayer has fewer than %d months; feature file is empty",
                    min_months)
    if dropped:
        log.warning("features: %d taxpayer(s) excluded, listed in excluded.csv", len(dropped))
    return written


def exec_features(resolved: dict, out: Path) -> dict:
    written = _features_to(out, resolved["returns"], resolved["min_months"])
    return _write_manifest(out, "features", resolved, {"returns": resolved["returns"]}, written)


def _train_to(out: Path, features_path: str, cfg: TrainConfig,
              resume: str | None = None) -> list[str]:
    table = load_features(features_path)
    if len(table) == 0:
        raise DataError(f"{features_path}: no feature rows to train on")
    model = None
    if resume:
        model = BiGanModel.load(resume)
        if model.data_dim != table.matrix.shape[1]:
            raise DataError(f"checkpoint expects {model.data_dim} features, "
                            f"{features_path} has {table.matrix.shape[1]}")
        x = model.stats.apply(table.matrix) if model.stats else normalize(table.matrix)[0]
        stats = model.stats
    else:
        x, stats = normalize(table.matrix)
    metrics_path = out / "metrics.jsonl"
    with metrics_path.open("w") as fh:
        def on_epoch(m):
            fh.write(json.dumps(m.to_dict(), sort_keys=True) + "\n")
        model, history = train(x, cfg, model=model, on_epoch=on_epoch)
    if model.stats is None:
        model.stats = stats
    model.save(out / "checkpoint.json")
    last = history[-1]
    log.info("train: %d epochs, final mean cosine %.4f, d_loss %.4f",
             len(history), last.mean_cosine, last.d_loss)
    return ["checkpoint.json", "metrics.jsonl"]


def exec_train(resolved: dict, out: Path) -> dict:
    cfg = _train_config(resolved)
    inputs = {"features": resolved["features"]}
    if resolved.get("resume"):
        inputs["resume"] = resolved["resume"]
    written = _train_to(out, resolved["features"], cfg, resolved.get("resume"))
    _write_json(out / "config.json", cfg.to_dict())
    return _write_manifest(out, "train", resolved, inputs, written + ["config.json"])


def _score_to(out: Path, checkpoint: str, features_path: str, labels_path: str | None) -> list[str]:
    model = BiGanModel.load(checkpoint)
    table = load_features(features_path)
    if table.matrix.shape[1] != model.data_dim:
        raise DataError(f"checkpoint expects {model.data_dim} features, "
                        f"{features_path} has {table.matrix.shape[1]}")
    x = model.stats.apply(table.matrix) if model.stats else normalize(table.matrix)[0]
    s = score(model, x)
    report = iqr_gate(s, table.ids)
    extra = {}
    if labels_path:
        labels = load_labels(labels_path)
        missing = [i for i in table.ids if i not in labels]
        if missing:
            raise DataError(f"{labels_path}: no label for {len(missing)} taxpayer(s), "
                            f"e.g. {missing[0]}")
        y = np.array([labels[i] for i in table.ids])
        extra["roc_auc"] = roc_auc(1.0 - s, y)
        flagged = report.flagged_mask
        extra["flagged_precision"] = float(y[flagged].mean()) if flagged.any() else None
        extra["flagged_recall"] = float(flagged[y].mean()) if y.any() else None
    report.write_csv(out / "report.csv")
    report.write_summary(out / "summary.json", extra)
    log.info("score: %d of %d flagged (threshold %.4f)",
             len(report.flagged), len(report.ids), report.threshold)
    return ["report.csv", "summary.json"]


def exec_score(resolved: dict, out: Path) -> dict:
    inputs = {"checkpoint": resolved["checkpoint"], "features": resolved["features"]}
    if resolved.get("labels"):
        inputs["labels"] = resolved["labels"]
    written = _score_to(out, resolved["checkpoint"], resolved["features"], resolved.get("labels"))
    return _write_manifest(out, "score", resolved, inputs, written)


def _final_cosine(features_path: str, cfg_dict: dict) -> tuple[float, list[dict]]:
    table = load_features(features_path)
    x, _ = normalize(table.matrix)
    _, history = train(x, TrainConfig.from_dict(cfg_dict))
    return history[-1].mean_cosine, [m.to_dict() for m in history]


def exec_compare(resolved: dict, out: Path) -> dict:
    base = dict(resolved["train"])
    runs = []
    for seed in resolved["seeds"]:
        for variant in (Alignment.COSINE.value, Alignment.EUCLIDEAN.value):
            runs.append((seed, variant, dict(base, seed=seed, alignment=variant)))
    n_jobs = max(1, int(resolved.get("jobs", 1)))
    if n_jobs == 1:
        results = [_final_cosine(resolved["features"], c) for _, _, c in runs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_final_cosine, [resolved["features"]] * len(runs),
                                    [c for _, _, c in runs]))
    finals: dict[tuple[int, str], float] = {}
    with (out / "curves.csv").open("w") as fh:
        fh.write("seed,alignment,epoch,d_loss,g_loss,e_loss,mean_cosine,mean_euclidean\n")
        for (seed, variant, _), (final, hist) in zip(runs, results):
            finals[(seed, variant)] = final
            for m in hist:
                fh.write(f"{seed},{variant},{m['epoch']},{m['d_loss']!r},{m['g_loss']!r},"
                         f"{m['e_loss']!r},{m['mean_cosine']!r},{m['mean_euclidean']!r}\n")
    rows = []
    for seed in resolved["seeds"]:
        c, e = finals[(seed, "cosine")], finals[(seed, "euclidean")]
        rows.append({"seed": seed, "cosine_final": c, "euclidean_final": e,
                     "cosine_wins": c >= e})
    wins = sum(r["cosine_wins"] for r in rows)
    with (out / "comparison.csv").open("w") as fh:
        fh.write("seed,cosine_final,euclidean_final,cosine_wins\n")
        for r in rows:
            fh.write(f"{r['seed']},{r['cosine_final']!r},{r['euclidean_final']!r},"
                     f"{str(r['cosine_wins']).lower()}\n")
    _write_json(out / "comparison.json", {"rows": rows, "cosine_wins": wins,
                                          "seeds": len(rows)})
    print("seed  cosine    euclidean  cosine>=euclidean")
    for r in rows:
        print(f"{r['seed']:<5} {r['cosine_final']:.6f}  {r['euclidean_final']:.6f}   "
              f"{r['cosine_wins']}")
    print(f"cosine wins {wins}/{len(rows)}")
    return _write_manifest(out, "compare", resolved, {"features": resolved["features"]},
                           ["curves.csv", "comparison.csv", "comparison.json"])


def exec_pipeline(resolved: dict, out: Path) -> dict:
    cfg = SynthConfig.from_dict(resolved["synth"]).validate()
    ds = generate(cfg)
    write_returns(out / "returns.csv", ds.records)
    write_labels(out / "labels.csv", ds.labels)
    written = ["returns.csv", "labels.csv"]
    written += _features_to(out, str(out / "returns.csv"), resolved["min_months"])
    written += _train_to(out, str(out / "features.csv"), _train_config(resolved))
    written += _score_to(out, str(out / "checkpoint.json"), str(out / "features.csv"),
                         str(out / "labels.csv"))
    return _write_manifest(out, "pipeline", resolved, {}, written)


EXECUTORS = {
    "synth": exec_synth,
    "features": exec_features,
    "train": exec_train,
    "score": exec_score,
    "compare": exec_compare,
    "pipeline": exec_pipeline,
}


# --- argument resolution ---------------------------------------------------

def _resolve_train(args, base: dict | None = None) -> dict:
    d = TrainConfig().to_dict()
    if base:
        d.update(base)
    if args.config and base is None:
        d.update(_read_json(args.config))
    for flag, key in (("seed", "seed"), ("alignment", "alignment"), ("epochs", "epochs"),
                      ("batch_size", "batch_size"), ("latent_dim", "latent_dim")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    return TrainConfig.from_dict(d).validate().to_dict()


def _resolve_synth(args, base: dict | None = None) -> dict:
    d = SynthConfig().to_dict()
    if base:
        d.update(base)
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "min_months", None) is not None:
        d["min_months"] = args.min_months
    return SynthConfig.from_dict(d).validate().to_dict()


def resolve(args) -> dict:
    cmd = args.command
    if cmd == "synth":
        base = _read_json(args.config) if args.config else None
        synth = _resolve_synth(args, base)
        return {"synth": synth, "seed": synth["seed"]}
    if cmd == "features":
        mm = DEFAULT_MIN_MONTHS if args.min_months is None else args.min_months
        if mm < 2:
            raise ConfigError("--min-months must be >= 2")
        return {"returns": _input(args.returns), "min_months": mm}
    if cmd == "train":
        t = _resolve_train(args)
        return {"features": _input(args.features), "train": t, "seed": t["seed"],
                "resume": _input(args.resume) if args.resume else None}
    if cmd == "score":
        return {"checkpoint": _input(args.checkpoint), "features": _input(args.features),
                "labels": _input(args.labels) if args.labels else None}
    if cmd == "compare":
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"--seeds must be a comma-separated list of integers: "
                              f"{args.seeds!r}") from None
        if not seeds:
            raise ConfigError("--seeds is empty")
        if args.epochs is not None and args.epochs < 1:
            raise ConfigError("--epochs must be >= 1")
        t = _resolve_train(args)
        return {"features": _input(args.features), "seeds": seeds, "train": t,
                "jobs": args.jobs, "seed": None}
    if cmd == "pipeline":
        doc = _read_json(args.config) if args.config else {}
        unknown = set(doc) - {"synth", "train", "min_months"}
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        synth = _resolve_synth(args, doc.get("synth", {}))
        t = _resolve_train(args, doc.get("train", {}))
        mm = args.min_months or doc.get("min_months", DEFAULT_MIN_MONTHS)
        return {"synth": synth, "train": t, "min_months": mm, "seed": t["seed"]}
    raise ConfigError(f"unknown command {cmd}")


def cmd_replay(args) -> int:
    manifest = _read_json(args.manifest)
    cmd = manifest.get("command")
    if cmd not in EXECUTORS:
        raise ConfigError(f"{args.manifest}: unknown command {cmd!r}")
    for name, info in manifest.get("inputs", {}).items():
        if sha256_file(_input(info["path"])) != info["sha256"]:
            raise DataError(f"input {name} ({info['path']}) changed since the manifest was written")
    out = _out_dir(args.out, cmd)
    new = EXECUTORS[cmd](manifest["resolved"], out)
    diffs = [k for k in manifest["outputs"] if manifest["outputs"][k] != new["outputs"].get(k)]
    if diffs:
        print(f"replay differs in: {', '.join(diffs)}", file=sys.stderr)
        return EXIT_DATA if args.check else EXIT_OK
    print(f"replay reproduced {len(new['outputs'])} output(s) byte-for-byte")
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TrainConfig JSON document")
    p.add_argument("--seed", type=int)
    p.add_argument("--alignment", choices=[a.value for a in Alignment])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bigantax", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic returns dataset with labels")
    p.add_argument("--config", help="SynthConfig JSON document")
    p.add_argument("--seed", type=int)
    p.add_argument("--min-months", dest="min_months", type=int)
    p.add_argument("--out")

    p = sub.add_parser("features", help="derive nine features per taxpayer")
    p.add_argument("returns")
    p.add_argument("--min-months", dest="min_months", type=int)
    p.add_argument("--out")

    p = sub.add_parser("train", help="train a BiGAN on a feature file")
    p.add_argument("features")
    _add_train_flags(p)
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--out")

    p = sub.add_parser("score", help="score taxpayers and apply the IQR gate")
    p.add_argument("checkpoint")
    p.add_argument("features")
    p.add_argument("--labels", help="taxpayer_id,is_fraud CSV; adds ROC-AUC to the summary")
    p.add_argument("--out")

    p = sub.add_parser("compare", help="cosine vs Euclidean alignment over several seeds")
    p.add_argument("features")
    p.add_argument("--seeds", default="0,1,2,3,4")
    _add_train_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("pipeline", help="synth -> features -> train -> score in one run")
    _add_train_flags(p)
    p.add_argument("--min-months", dest="min_months", type=int)
    p.add_argument("--out")

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.add_argument("--check", action="store_true",
                   help="exit 2 when any output hash differs from the manifest")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args)
        resolved = resolve(args)
        out = _out_dir(args.out, args.command)
        EXECUTORS[args.command](resolved, out)
        return EXIT_OK
    except ConfigError as e:
        print(f"bigantax: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"bigantax: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, BiganTaxError) as e:
        print(f"bigantax: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
