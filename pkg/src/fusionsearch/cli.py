"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (failed validation, bad config or
genome, manifest hash mismatch), 2 I/O or file-format failure. Machine-readable
results go to stdout; logs go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .feature_store import (
    MANIFEST_NAME,
    SPLITS,
    PoolFormatError,
    load_labels,
    load_pool,
    save_labels,
    save_pool,
    validate_pool,
)
from .fusion_tree import FusionOp, Genome
from .metrics import report as metric_report
from .moea import (
    Evaluator,
    ParetoFront,
    SearchConfig,
    dominates,
    entry_to_json,
    resolve_workers,
    run_search,
)
from .synthetic import PlantConfig, generate_planted_pool

log = logging.getLogger("fusionsearch")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class InvalidInput(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _emit(obj) -> None:
    sys.stdout.write(_dump(obj))


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _input_hashes(pool_dir: Path, labels_path: Path) -> dict[str, str]:
    pool_dir = Path(pool_dir)
    manifest_path = pool_dir / MANIFEST_NAME if pool_dir.is_dir() else pool_dir
    manifest = json.loads(manifest_path.read_text())
    files = [manifest_path.name, manifest["mask_file"]] + [f["file"] for f in manifest["features"]]
    hashes = {f"pool/{name}": _sha256(manifest_path.parent / name) for name in files}
    hashes["labels"] = _sha256(labels_path)
    return hashes


# -- synth ------------------------------------------------------------------


def _parse_pairs(text: str | None) -> tuple[tuple[int, int], ...]:
    if not text:
        return ()
    pairs = []
    for chunk in text.split(","):
        i, j = chunk.split(":")
        pairs.append((int(i), int(j)))
    return tuple(pairs)


def cmd_synth(args) -> int:
    strengths = tuple(float(v) for v in args.strengths.split(",")) if args.strengths else ()
    try:
        cfg = PlantConfig(
            n_res=args.n_res,
            n_features=args.n_features,
            dim=args.dim,
            strengths=strengths,
            complementary_pairs=_parse_pairs(args.pairs),
            nuisance_sd=args.nuisance_sd,
            pair_ratio=args.pair_ratio,
            noise_sd=args.noise_sd,
            signal_dims=args.signal_dims,
            positive_rate=args.positive_rate,
            pad_fraction=args.pad_fraction,
            seed=args.seed,
        )
    except ValueError as exc:
        raise InvalidInput(str(exc)) from exc
    pool, labels = generate_planted_pool(cfg)
    out = Path(args.out)
    save_pool(pool, out)
    save_labels(labels, out / "labels.csv")
    (out / "plant.json").write_text(_dump(cfg.to_json()))
    _emit({"pool": str(out), "labels": str(out / "labels.csv"), "n_features": pool.T, "n_res": pool.n_res})
    return EXIT_OK


# -- validate ---------------------------------------------------------------


def cmd_validate(args) -> int:
    pool = load_pool(args.pool)
    labels = load_labels(args.labels)
    rep = validate_pool(pool, labels)
    _emit({"ok": rep.ok, "issues": rep.issues})
    return EXIT_OK if rep.ok else EXIT_INVALID


# -- search -----------------------------------------------------------------

CONFIG_FLAGS = {
    "population_size": int,
    "max_generations": int,
    "p_mutation": float,
    "p_crossover": float,
    "n_max": int,
    "rho0": float,
    "ridge": float,
    "seed": int,
    "patience": int,
}


def _build_config(args, base: dict) -> SearchConfig:
    raw = dict(base)
    for name in CONFIG_FLAGS:
        value = getattr(args, name)
        if value is not None:
            raw[name] = value
    if args.rho_range is not None:
        raw["rho_range"] = args.rho_range
    if args.objective_mode is not None:
        raw["objective_mode"] = args.objective_mode
    if args.weight_mode is not None:
        raw["weight_mode"] = args.weight_mode
    if args.fixed_operator is not None:
        raw["fixed_operator"] = args.fixed_operator
    if args.workers is not None or "workers" not in raw:
        raw["workers"] = resolve_workers(args.workers)
    try:
        return SearchConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(str(exc)) from exc


def write_outputs(result, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "front.json").write_text(_dump(result.front.to_json()))
    (out / "best.json").write_text(_dump(entry_to_json(result.best)))
    with open(out / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["generation", "best_f1", "mean_f2", "front_size"])
        for h in result.history:
            writer.writerow([h.generation, repr(h.best_f1), repr(h.mean_f2), h.front_size])


def cmd_search(args) -> int:
    started = time.perf_counter()
    base: dict = {}
    pool_path, labels_path, config_path = args.pool, args.labels, args.config
    expected_hashes = None
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text())
        base = dict(manifest["config"])
        pool_path = pool_path or manifest["inputs"]["pool"]
        labels_path = labels_path or manifest["inputs"]["labels"]
        expected_hashes = manifest.get("hashes")
    if config_path:
        base.update(json.loads(Path(config_path).read_text()))
    if not pool_path or not labels_path:
        raise InvalidInput("--pool and --labels are required (directly or via --from-manifest)")
    config = _build_config(args, base)

    pool = load_pool(pool_path)
    labels = load_labels(labels_path)
    hashes = _input_hashes(Path(pool_path), Path(labels_path))
    if expected_hashes is not None and expected_hashes != hashes:
        changed = sorted(k for k in set(hashes) | set(expected_hashes) if hashes.get(k) != expected_hashes.get(k))
        raise InvalidInput(f"inputs differ from the manifest: {changed}")
    rep = validate_pool(pool, labels)
    if not rep.ok:
        for issue in rep.issues:
            log.error("validation: %s", issue)
        return EXIT_INVALID

    log.info("searching with %s", config)
    result = run_search(config, pool, labels)
    out = Path(args.out)
    write_outputs(result, out)
    run_manifest = {
        "tool": "fusionsearch",
        "version": __version__,
        "config": config.to_dict(),
        "seed": config.seed,
        "inputs": {
            "pool": str(Path(pool_path).resolve()),
            "labels": str(Path(labels_path).resolve()),
            "config": str(Path(config_path).resolve()) if config_path else None,
        },
        "hashes": hashes,
        "evaluations": result.evaluations,
        "duration_s": time.perf_counter() - started,
    }
    (out / "run_manifest.json").write_text(_dump(run_manifest))
    _emit({"best": entry_to_json(result.best), "front_size": len(result.front), "out": str(out)})
    return EXIT_OK


# -- eval / metrics -----------------------------------------------------------


def _read_genome(path) -> Genome:
    obj = json.loads(Path(path).read_text())
    if "genome" in obj:
        obj = obj["genome"]
    return Genome.from_json(obj)


def cmd_eval(args) -> int:
    pool = load_pool(args.pool)
    labels = load_labels(args.labels)
    genome = _read_genome(args.genome)
    try:
        genome.check(T=pool.T)
    except ValueError as exc:
        raise InvalidInput(f"invalid genome: {exc}") from exc
    evaluator = Evaluator(pool, labels, SearchConfig(ridge=args.ridge), score_split=args.split)
    scores = evaluator.scores(genome)
    y = labels.split_labels(args.split)
    try:
        out = metric_report(scores, y)
    except ValueError as exc:
        raise InvalidInput(str(exc)) from exc
    out["n_features"] = genome.n
    out["split"] = args.split
    _emit(out)
    return EXIT_OK


def _read_scores(path, n_res: int) -> tuple[np.ndarray, np.ndarray]:
    scores = np.full(n_res, np.nan)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"index", "score"} <= set(reader.fieldnames or ()):
            raise PoolFormatError(f"{path}: expected columns index,score")
        for row in reader:
            i = int(row["index"])
            if not 0 <= i < n_res:
                raise InvalidInput(f"score index {i} outside 0..{n_res - 1}")
            scores[i] = float(row["score"])
    return scores, ~np.isnan(scores)


def cmd_metrics(args) -> int:
    labels = load_labels(args.labels)
    scores, present = _read_scores(args.scores, len(labels))
    use = present & labels.mask
    if args.split:
        use &= labels.split == args.split
    try:
        out = metric_report(np.nan_to_num(scores), labels.labels, args.threshold, mask=use)
    except ValueError as exc:
        raise InvalidInput(str(exc)) from exc
    out["n_residues"] = int(use.sum())
    _emit(out)
    return EXIT_OK


# -- export-front ---------------------------------------------------------------


def front_tallies(front: ParetoFront) -> tuple[Counter, Counter]:
    features, operators = Counter(), Counter()
    for entry in front:
        features.update(entry.genome.s)
        operators.update(FusionOp(op).label for op in entry.genome.q)
    return features, operators


def cmd_export_front(args) -> int:
    front_path = Path(args.front)
    if not front_path.is_file():
        raise FileNotFoundError(f"front file not found: {front_path}")
    front = ParetoFront.from_json(json.loads(front_path.read_text()))
    entries = sorted(front.entries, key=lambda e: (e.fitness.f2, -e.fitness.f1))
    fits = [e.fitness for e in entries]
    if any(dominates(a, b) for a in fits for b in fits):
        log.warning("front.json contains dominated entries")
    out = Path(args.out_dir) if args.out_dir else front_path.parent
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "front_points.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["f1", "f2", "generation", "features", "operators"])
        for e in entries:
            writer.writerow([
                repr(e.fitness.f1),
                e.fitness.f2,
                e.generation,
                " ".join(map(str, e.genome.s)),
                " ".join(FusionOp(op).label for op in e.genome.q),
            ])
    features, operators = front_tallies(front)
    with open(out / "front_tallies.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "key", "count"])
        for t in sorted(features):
            writer.writerow(["feature", t, features[t]])
        for op in FusionOp:
            writer.writerow(["operator", op.label, operators.get(op.label, 0)])
    _emit({
        "points": str(out / "front_points.csv"),
        "tallies": str(out / "front_tallies.csv"),
        "n_points": len(entries),
        "feature_counts": {str(k): v for k, v in sorted(features.items())},
        "operator_counts": {op.label: operators.get(op.label, 0) for op in FusionOp},
    })
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusionsearch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a planted-signal pool directory")
    p.add_argument("--out", required=True)
    p.add_argument("--n-res", type=int, default=2000)
    p.add_argument("--n-features", type=int, default=6)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--strengths", help="comma-separated, one per feature")
    p.add_argument("--pairs", help="complementary pairs, e.g. 0:1,2:3")
    p.add_argument("--nuisance-sd", type=float, default=2.0)
    p.add_argument("--pair-ratio", type=float, default=1.0)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--signal-dims", type=int, default=4)
    p.add_argument("--positive-rate", type=float, default=0.3)
    p.add_argument("--pad-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check a pool and its labels")
    p.add_argument("--pool", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("search", help="run the evolutionary fusion search")
    p.add_argument("--pool")
    p.add_argument("--labels")
    p.add_argument("--config", help="JSON file with SearchConfig fields")
    p.add_argument("--from-manifest", help="re-run from a previous run_manifest.json")
    p.add_argument("--out", default=".")
    p.add_argument("--population-size", "--N", dest="population_size", type=int)
    p.add_argument("--max-generations", "--G-max", dest="max_generations", type=int)
    p.add_argument("--p-mutation", type=float)
    p.add_argument("--p-crossover", type=float)
    p.add_argument("--n-max", type=int)
    p.add_argument("--rho0", type=float)
    p.add_argument("--rho-range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--ridge", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--objective-mode", "--objective", dest="objective_mode", choices=["multi", "single", "single_f1"])
    p.add_argument("--weight-mode", choices=["evolved", "fixed_one"])
    p.add_argument("--fixed-operator", choices=["none", "Add", "Mul", "Max", "Min"])
    p.add_argument("--patience", type=int)
    p.add_argument("--workers", type=int, help="parallel evaluations (default: $FUSION_WORKERS or 1)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="metric report for one genome")
    p.add_argument("--genome", required=True, help="best.json, a front entry or a bare {s,q,a} genome")
    p.add_argument("--pool", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--ridge", type=float, default=1e-6)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="metric report for a scores CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("export-front", help="plot-ready CSVs from front.json")
    p.add_argument("--front", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_export_front)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, PoolFormatError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
