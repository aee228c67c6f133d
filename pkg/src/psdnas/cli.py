"""Command-line entry point: ``psdnas <command> ...``.

Every command accepts ``--config FILE`` (a JSON object whose keys are the
command's option names); explicit flags override values from the file.
Failures exit with status 1 and print one ``error: {...}`` JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .image_io import add_gaussian_noise, apply_bernoulli_mask, downsample, load_image, psnr, save_image
from .metrics import METRICS, ScoreConfig, read_scores, score_model, write_scores
from .search_space import deserialize_space, serialize_space, sample_space
from .selection import SelectionConfig, rank, run_selection
from .trainer import DEFAULT_ITERATIONS, TaskObjective, TrainConfig, train_dip

log = logging.getLogger("psdnas")

TASKS = tuple(DEFAULT_ITERATIONS)


def _out_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(args, out: Path) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    (out / f"{args.command}_config.json").write_text(json.dumps(cfg, indent=2, default=str))


def _load_manifest(path):
    return deserialize_space(Path(path).read_text())


def _train_config(args, task: str) -> TrainConfig:
    return TrainConfig(
        iterations=args.iterations or DEFAULT_ITERATIONS[task],
        learning_rate=args.lr,
        gamma=args.gamma,
        width=args.width,
        noise_channels=args.noise_channels,
        init_seed=args.init_seed,
        noise_seed=args.noise_seed,
    )


def _objective(task: str, corrupted, mask_path=None, factor=None) -> TaskObjective:
    mask = None
    if task == "inpainting":
        if mask_path is None:
            raise ValueError("inpainting needs --mask")
        mask = (load_image(mask_path) > 0.5).astype(np.float64)
    return TaskObjective(task, corrupted, mask, factor if task == "super_resolution" else None)


def cmd_sample(args) -> int:
    genomes = sample_space(args.count, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(serialize_space(genomes) + "\n")
    log.info("wrote %d genomes to %s", len(genomes), out)
    return 0


def cmd_corrupt(args) -> int:
    img = load_image(args.image)
    out = _out_dir(args.out)
    stem = Path(args.image).stem
    if args.task == "denoising":
        corrupted = add_gaussian_noise(img, args.sigma, args.seed)
    elif args.task == "inpainting":
        corrupted, mask = apply_bernoulli_mask(img, args.keep_prob, args.seed)
        save_image(mask, out / f"{stem}_mask.png")
    else:
        corrupted = downsample(img, args.factor)
    save_image(corrupted, out / f"{stem}_{args.task}.png")
    np.save(out / f"{stem}_{args.task}.npy", corrupted)
    return 0


def _load_corrupted(path):
    # .npy keeps unclipped noisy values; image files are 8-bit
    return np.load(path) if str(path).endswith(".npy") else load_image(path)


def _score_job(job):
    genome, corrupted, config, image_id = job
    try:
        return score_model(genome, corrupted, config, image_id), None
    except (RuntimeError, ValueError) as exc:
        return None, f"{genome.id}: {type(exc).__name__}: {exc}"


def score_genomes(genomes, corrupted, config: ScoreConfig, image_id: str = "", workers: int = 1):
    jobs = [(g, corrupted, config, image_id) for g in genomes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_single_thread) as pool:
            results = list(pool.map(_score_job, jobs, chunksize=4))
    else:
        results = []
        for k, job in enumerate(jobs, start=1):
            results.append(_score_job(job))
            if k % 50 == 0 or k == len(jobs):
                log.info("scored %d/%d genomes", k, len(jobs))
    scores = []
    for res, err in results:
        if res is None:
            log.warning("scoring failed for %s", err)
        else:
            scores.append(res)
    return scores


def _single_thread():
    import torch

    torch.set_num_threads(1)


def _score_config(args) -> ScoreConfig:
    return ScoreConfig(args.init_seed, args.noise_seed, args.width, args.noise_channels,
                       args.samples, args.hist_normalization)


def cmd_score(args) -> int:
    genomes = _load_manifest(args.manifest)
    corrupted = _load_corrupted(args.corrupted)
    image_id = args.image_id or Path(args.corrupted).stem
    scores = score_genomes(genomes, corrupted, _score_config(args), image_id, args.workers)
    write_scores(scores, args.out)
    log.info("wrote %d score rows to %s", len(scores), args.out)
    return 0


def cmd_rank(args) -> int:
    scores = read_scores(args.scores)
    value = {s.genome_id: s.value(args.metric) for s in scores}
    ordered = rank(scores, args.metric)[: args.top or None]
    lines = ["rank,genome_id," + args.metric]
    lines += [f"{k},{g},{value[g]!r}" for k, g in enumerate(ordered, start=1)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_select(args) -> int:
    genomes = _load_manifest(args.manifest)
    scores = read_scores(args.scores)
    corrupted = _load_corrupted(args.corrupted)
    obj = _objective(args.task, corrupted, args.mask, args.factor)
    gt = load_image(args.ground_truth) if args.ground_truth else None
    config = SelectionConfig(args.metric, args.n, args.mode, (args.resized_size, args.resized_size),
                             _train_config(args, args.task), args.workers)
    result = run_selection(genomes, scores, obj, config, gt)
    out = _out_dir(args.out)
    _echo_config(args, out)
    result.export(out)
    log.info("chosen genome %s among %d candidates", result.chosen_id, len(result.candidate_ids))
    return 0


def cmd_restore(args) -> int:
    genomes = {g.id: g for g in _load_manifest(args.manifest)}
    if args.genome_id not in genomes:
        raise KeyError(f"genome {args.genome_id} not in manifest")
    corrupted = _load_corrupted(args.corrupted)
    obj = _objective(args.task, corrupted, args.mask, args.factor)
    gt = load_image(args.ground_truth) if args.ground_truth else None
    run = train_dip(genomes[args.genome_id], obj, _train_config(args, args.task), gt)
    out = _out_dir(args.out)
    _echo_config(args, out)
    run.export(out, stem="restored")
    if gt is not None:
        log.info("final PSNR %.3f dB", run.final_psnr)
    return 0


def _corrupt_for_task(img, task, args, seed):
    if task == "denoising":
        return TaskObjective(task, add_gaussian_noise(img, args.sigma, seed)), img
    if task == "inpainting":
        corrupted, mask = apply_bernoulli_mask(img, args.keep_prob, seed)
        return TaskObjective(task, corrupted, mask), img
    return TaskObjective(task, downsample(img, args.factor), factor=args.factor), img


def cmd_bench(args) -> int:
    genomes = _load_manifest(args.manifest)
    corpus = sorted(p for p in Path(args.corpus).iterdir() if p.suffix.lower() in (".png", ".pgm", ".ppm"))
    if not corpus:
        raise ValueError(f"no images in {args.corpus}")
    out = _out_dir(args.out)
    _echo_config(args, out)
    store = analysis.BenchStore(out / "bench.csv")
    done = store.keys()
    train_cfg = _train_config(args, args.task)
    score_cfg = _score_config(args)
    n_scores, gt_scores = [], []
    for k, path in enumerate(corpus):
        image_id = path.stem
        obj, gt = _corrupt_for_task(load_image(path), args.task, args, args.corruption_seed + k)
        corrupted = obj.target
        if args.task == "super_resolution":
            # metrics need an image of the network output size
            from .image_io import resize
            corrupted = resize(obj.target, *gt.shape[:2])
        n_scores += score_genomes(genomes, corrupted, score_cfg, image_id, args.workers)
        gt_scores += score_genomes(genomes, gt, score_cfg, image_id, args.workers)
        by_genome = {s.genome_id: s for s in n_scores if s.image_id == image_id}
        for g in genomes:
            key = (image_id, g.id, args.task, train_cfg.iterations)
            if key in done:
                continue
            try:
                run = train_dip(g, obj, train_cfg, gt)
            except (RuntimeError, ValueError) as exc:
                log.warning("bench run %s/%s failed: %s", image_id, g.id, exc)
                continue
            s = by_genome.get(g.id)
            snap = [s.value(m) for m in METRICS] if s else [float("nan")] * len(METRICS)
            store.append(analysis.BenchRecord(
                image_id, g.id, args.task, train_cfg.iterations,
                run.final_psnr, run.optimal_stopping_iteration, *snap,
            ))
            log.info("%s %s psnr=%.3f", image_id, g.id, run.final_psnr)
        log.info("%s: corrupted PSNR %.3f dB", image_id, psnr(corrupted, gt))
    write_scores(n_scores, out / "scores_N.csv")
    write_scores(gt_scores, out / "scores_GT.csv")
    return 0


def _scores_lookup(path):
    return {(s.image_id, s.genome_id): s for s in read_scores(path)}


def cmd_correlate(args) -> int:
    records = analysis.BenchStore(args.store).read()
    if not records:
        raise ValueError(f"benchmark store {args.store} is empty")
    if args.scores:
        lookup = {"N": _scores_lookup(args.scores)}
    else:
        from .metrics import MetricScores
        lookup = {"N": {(r.image_id, r.genome_id): MetricScores(
            r.genome_id, *(getattr(r, m) for m in METRICS), image_id=r.image_id) for r in records}}
    if args.gt_scores:
        lookup["GT"] = _scores_lookup(args.gt_scores)
    rows = analysis.correlation_report(records, lookup)
    out = _out_dir(args.out)
    _echo_config(args, out)
    analysis.write_rows(rows, out / "correlations.csv")
    by_image: dict = {}
    for r in records:
        by_image.setdefault(r.image_id, []).append(r)
    k = min(args.top_k, min(len(v) for v in by_image.values()))
    ids, matrix = analysis.overlap_matrix({i: analysis.top_k(v, k) for i, v in by_image.items()})
    analysis.write_matrix(ids, matrix, out / f"overlap_top{k}.csv")
    return 0


def cmd_histogram(args) -> int:
    records = [r for r in analysis.BenchStore(args.store).read() if r.image_id == args.image_id]
    if not records:
        raise ValueError(f"no records for image {args.image_id!r}")
    hist = analysis.psnr_histogram(records, args.metric, tuple(args.n), args.bins)
    out = _out_dir(args.out)
    hist.write_csv(out / f"histogram_{args.image_id}.csv")
    n_random = min(args.random_n, len(records))
    baseline = analysis.random_selection_baseline(records, n_random, args.trials, args.seed)
    summary = {
        "image_id": args.image_id,
        "metric": args.metric,
        "best_in_top_n": {str(n): v for n, v in hist.highlights.items()},
        "random_best_of_n": {"n": n_random, "trials": args.trials, "mean_psnr": baseline},
        "global_best": max(r.final_psnr for r in records),
    }
    (out / f"histogram_{args.image_id}.json").write_text(json.dumps(summary, indent=2))
    return 0


def _add_train_flags(p):
    p.add_argument("--iterations", type=int, default=None, help="default: 1200/9500/4500 by task")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=0.99)
    _add_net_flags(p)


def _add_net_flags(p):
    p.add_argument("--width", type=int, default=32, help="channels per stage")
    p.add_argument("--noise-channels", type=int, default=32)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--noise-seed", type=int, default=0)


def _add_score_flags(p):
    _add_net_flags(p)
    p.add_argument("--samples", type=int, default=1, help="random initializations averaged per genome")
    p.add_argument("--hist-normalization", choices=("max", "sum", "db_minmax"), default="max")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psdnas", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file with option defaults")
        p.set_defaults(func=func)
        return p

    p = add("sample", cmd_sample, "sample genomes into a manifest")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("corrupt", cmd_corrupt, "corrupt a clean image for a task")
    p.add_argument("--image", required=True)
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--keep-prob", type=float, default=0.5)
    p.add_argument("--factor", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("score", cmd_score, "score untrained genomes against a corrupted image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--corrupted", required=True, help="image file or .npy array")
    p.add_argument("--image-id", default="")
    _add_score_flags(p)
    p.add_argument("--out", required=True)

    p = add("rank", cmd_rank, "order scored genomes by a metric")
    p.add_argument("--scores", required=True)
    p.add_argument("--metric", choices=METRICS, default="psd_db_strip_mse")
    p.add_argument("--top", type=int, default=0)
    p.add_argument("--out")

    for name, func, help in (("select", cmd_select, "shortlist, train and pick a genome"),
                             ("restore", cmd_restore, "restore an image with one genome")):
        p = add(name, func, help)
        p.add_argument("--manifest", required=True)
        p.add_argument("--corrupted", required=True)
        p.add_argument("--task", choices=TASKS, default="denoising")
        p.add_argument("--mask")
        p.add_argument("--factor", type=int, default=4)
        p.add_argument("--ground-truth")
        _add_train_flags(p)
        p.add_argument("--out", required=True)
        if name == "select":
            p.add_argument("--scores", required=True)
            p.add_argument("--metric", choices=METRICS, default="psd_db_strip_mse")
            p.add_argument("--n", type=int, default=15)
            p.add_argument("--mode", choices=("full_sized", "resized"), default="resized")
            p.add_argument("--resized-size", type=int, default=64)
            p.add_argument("--workers", type=int, default=1)
        else:
            p.add_argument("--genome-id", required=True)

    p = add("bench", cmd_bench, "train every genome on every corpus image (resumable)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--corpus", required=True, help="directory of clean images")
    p.add_argument("--task", choices=TASKS, default="denoising")
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--keep-prob", type=float, default=0.5)
    p.add_argument("--factor", type=int, default=4)
    p.add_argument("--corruption-seed", type=int, default=0)
    _add_train_flags(p)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--hist-normalization", choices=("max", "sum", "db_minmax"), default="max")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("correlate", cmd_correlate, "Kendall correlations and top-k overlaps")
    p.add_argument("--store", required=True)
    p.add_argument("--scores", help="scores vs corrupted images (default: store snapshot)")
    p.add_argument("--gt-scores", help="scores vs ground truth")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out", required=True)

    p = add("histogram", cmd_histogram, "PSNR histogram data with top-N highlights")
    p.add_argument("--store", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("--metric", choices=METRICS, default="psd_db_strip_mse")
    p.add_argument("--n", type=int, nargs="+", default=[5, 15])
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--random-n", type=int, default=15)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _config_path(argv) -> str | None:
    for k, tok in enumerate(argv):
        if tok == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    path = _config_path(argv)
    command = next((tok for tok in argv if not tok.startswith("-")), None)
    subparsers = parser._subparsers._group_actions[0].choices
    if path and command in subparsers:
        defaults = json.loads(Path(path).read_text())
        if not isinstance(defaults, dict):
            raise ValueError("config file must hold a JSON object")
        defaults = {k.replace("-", "_"): v for k, v in defaults.items()}
        sub = subparsers[command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        sub.set_defaults(**defaults)
        for action in sub._actions:
            if action.dest in defaults:
                action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print("error: " + json.dumps({"type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable line
        print("error: " + json.dumps({"command": args.command, "type": type(exc).__name__,
                                      "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
