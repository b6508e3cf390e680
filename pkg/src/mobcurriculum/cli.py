"""Command-line entry point.

Data-level commands (``ingest``, ``synth``, ``entropy``, ``augment``,
``curriculum``) read and write explicit files. Model-level commands (``train``,
``finetune``, ``predict``, ``eval``) and ``pipeline`` work inside a run
directory ``<output_dir>/run-<config hash>`` that also holds a copy of the
config, so every artifact sits beside what is needed to reproduce it.

Failures print a single line on stderr::

    error code=<exit code> type=<exception class> message=<JSON string>

Exit codes: 0 ok, 2 usage or config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from . import __version__
from .augment import augment_dataset, transform_poi, AugmentOp
from .config import THREADS_ENV, ConfigError, PipelineConfig
from .core import (DataError, Dataset, PoiTable, Trajectory, read_poi, read_trajectories, split_by_user,
                   trajectories_to_csv, uid_sort_key, validate, write_poi)
from .curriculum import build_curriculum, finetune_schedule
from .entropy import entropy_histogram, entropy_records, fano_bound, write_entropy_csv
from .features import SampleError
from .metrics import MetricsError, evaluate
from .model import build_model, collate, grad_check, load_checkpoint, save_checkpoint, ModelConfig
from .synth import SynthConfig, synth_generate
from .training import SampleStore, TrainingError, deterministic_math, finetune, predict_samples, train

logger = logging.getLogger("mobcurriculum")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------- helpers


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "preset", None) == "desk" and not getattr(args, "config", None):
        cfg = PipelineConfig.desk()
    overrides = {}
    for name in ("data", "poi", "output_dir"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = str(value)
    if overrides:
        cfg = replace(cfg, paths=replace(cfg.paths, **overrides))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg.with_env_overrides()


def _read_dataset(cfg: PipelineConfig, required: bool = True) -> Dataset:
    if cfg.paths.data is None:
        raise ConfigError("no trajectory file: set paths.data in the config or pass --data")
    ds = read_trajectories(cfg.paths.data, cfg.grid, cfg.time)
    if cfg.paths.poi is not None:
        ds = Dataset(ds.grid, ds.time, ds.trajectories, read_poi(cfg.paths.poi, cfg.grid))
    return ds


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(f"wrote {path}")
    return path


def _prepare_run(cfg: PipelineConfig) -> Path:
    run = cfg.run_dir()
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.json").write_text(cfg.to_json())
    return run


def _poi_categories(ds: Dataset) -> int:
    return ds.poi.num_categories if ds.poi is not None else 85


def _partitions(cfg: PipelineConfig, ds: Dataset):
    return split_by_user(ds, cfg.split, cfg.seed)


def _points_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["uid", "d", "t", "x", "y"])
    w.writerows(rows)
    return buf.getvalue()


def _read_points(path) -> Dict[str, np.ndarray]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"file not found: {p}")
    out: Dict[str, List[List[int]]] = {}
    with p.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["uid", "d", "t", "x", "y"]:
            raise DataError(f"{p}: expected header uid,d,t,x,y, got {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.setdefault(row[0], []).append([int(v) for v in row[1:5]])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{p}:{lineno}: malformed row {row}") from exc
    return {u: np.asarray(v, dtype=np.int64) for u, v in out.items()}


def _model_samples(cfg: PipelineConfig, ds: Dataset):
    store = SampleStore(ds, cfg.features, cfg.observe_days)
    return store.samples(ds.uids, cfg.horizon_days)


# --------------------------------------------------------------------------- data commands


def cmd_init_config(args) -> int:
    cfg = PipelineConfig.desk() if args.preset == "desk" else PipelineConfig()
    text = cfg.to_json()
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    ds = _read_dataset(cfg)
    report = validate(ds)
    out = Path(args.out)
    _write(out / "trajectories.csv", trajectories_to_csv(ds))
    if ds.poi is not None:
        buf = io.StringIO()
        write_poi(ds.poi, buf)
        _write(out / "poi.csv", buf.getvalue())
    _write(out / "validation.txt", report.to_text())
    if not report.ok:
        raise DataError(f"validation failed; see {out / 'validation.txt'}")
    return EXIT_OK


def _synth_config(cfg: PipelineConfig) -> SynthConfig:
    s = cfg.synth
    return SynthConfig(grid=cfg.grid, time=cfg.time, num_users=s.num_users, mix=s.mix, noise_prob=s.noise_prob,
                       sparsity=s.sparsity, seed=cfg.seed, num_categories=s.num_categories,
                       num_anchors=s.num_anchors)


def _write_synth(cfg: PipelineConfig, out: Path):
    scfg = _synth_config(cfg)
    res = synth_generate(scfg)
    _write(out / "trajectories.csv", trajectories_to_csv(res.dataset))
    buf = io.StringIO()
    write_poi(res.dataset.poi, buf)
    _write(out / "poi.csv", buf.getvalue())
    _write(out / "archetypes.csv", "uid,archetype\n" + "".join(f"{u},{a}\n" for u, a in res.archetypes.items()))
    return res


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    if args.users is not None:
        cfg = replace(cfg, synth=replace(cfg.synth, num_users=args.users))
    out = Path(args.out)
    _write_synth(cfg, out)
    _write(out / "config.json", cfg.to_json())
    return EXIT_OK


def cmd_entropy(args) -> int:
    cfg = _load_config(args)
    ds = _read_dataset(cfg)
    out = Path(args.out)
    buf = io.StringIO()
    write_entropy_csv(entropy_records(ds), buf)
    _write(out / "entropy.csv", buf.getvalue())
    hist = entropy_histogram(ds, args.bins)
    rows = ["bin_lo,bin_hi,count"] + [f"{float(lo)!r},{float(hi)!r},{int(c)}" for lo, hi, c in
                                      zip(hist.edges[:-1], hist.edges[1:], hist.counts)]
    _write(out / "entropy_histogram.csv", "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg = _load_config(args)
    ds = _read_dataset(cfg)
    aug = augment_dataset(ds)
    out = Path(args.out)
    _write(out / "trajectories.csv", trajectories_to_csv(aug))
    if ds.poi is not None:
        for op in AugmentOp:
            if op is AugmentOp.IDENTITY:
                continue
            buf = io.StringIO()
            write_poi(transform_poi(ds.poi, op, ds.grid), buf)
            _write(out / f"poi{op.tag.replace('#', '_')}.csv", buf.getvalue())
    return EXIT_OK


def cmd_curriculum(args) -> int:
    cfg = _load_config(args)
    ds = _read_dataset(cfg)
    sched = build_curriculum(ds, cfg.stages)
    _write(Path(args.out) / "schedule.csv", sched.to_csv())
    return EXIT_OK


def cmd_fano(args) -> int:
    b = fano_bound(args.h, args.q)
    print(f"phi={b.max_accuracy!r} h={b.entropy_bits!r} q={b.alphabet}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .synth import DESK_GRID, DESK_TIME, desk_config
    from .features import FeatureConfig

    ds = synth_generate(desk_config(4, seed=args.seed)).dataset
    fc = FeatureConfig(timedelta_cap=8)
    samples = SampleStore(ds, fc, 15).samples(ds.uids, 1)
    cfg = ModelConfig.for_data(DESK_GRID, DESK_TIME, embed_dim=16, num_layers=1, num_heads=1, dropout=0.0,
                               timedelta_cap=8, seed=args.seed)
    model = build_model(cfg, dtype=torch.float64)
    rep = grad_check(model, collate(samples[:2]), eps=1e-5, num_params=args.params, seed=args.seed)
    print(rep.summary())
    if rep.max_rel_error >= args.tol:
        raise TrainingError(f"gradient check failed: max relative error {rep.max_rel_error:.3e} >= {args.tol:g}")
    return EXIT_OK


# --------------------------------------------------------------------------- run-directory commands


def _stage_train(cfg: PipelineConfig, ds: Dataset, run: Path, log_every: int = 1):
    tr, va, _ = _partitions(cfg, ds)
    aug = augment_dataset(tr)
    sched = build_curriculum(aug, cfg.stages)
    _write(run / "schedule.csv", sched.to_csv())
    store = SampleStore(aug, cfg.features, cfg.observe_days)
    model, hist = train(sched, store, cfg.model_config(_poi_categories(ds)), cfg.optimizer_config(),
                        _model_samples(cfg, va), log_every=log_every)
    save_checkpoint(model, run / "model.pt", extra={"config_digest": cfg.digest()})
    print(f"wrote {run / 'model.pt'}")
    _write(run / "history.csv", hist.to_csv(include_time=False))
    return model


def _stage_finetune(cfg: PipelineConfig, ds: Dataset, run: Path, model=None, log_every: int = 1):
    if model is None:
        model = _load_run_checkpoint(run / "model.pt")
    tr, va, _ = _partitions(cfg, ds)
    sched = finetune_schedule(tr, cfg.stages, cfg.finetune_epochs)
    store = SampleStore(tr, cfg.features, cfg.observe_days)
    model, hist = finetune(model, sched, store, cfg.optimizer_config(), _model_samples(cfg, va))
    save_checkpoint(model, run / "finetuned.pt", extra={"config_digest": cfg.digest()})
    print(f"wrote {run / 'finetuned.pt'}")
    _write(run / "finetune_history.csv", hist.to_csv(include_time=False))
    return model


def _stage_predict(cfg: PipelineConfig, ds: Dataset, run: Path, model=None):
    if model is None:
        model = _load_run_checkpoint(run / "finetuned.pt")
    _, _, te = _partitions(cfg, ds)
    samples = _model_samples(cfg, te)
    if not samples:
        raise DataError("no test user has both an observed prefix and a target window")
    preds = predict_samples(model, samples, ds.grid.height)
    rows, truth_rows = [], []
    for p, s in zip(preds, samples):
        rows += [[p.uid, int(d), int(t), int(x), int(y)] for (d, t), (x, y) in zip(p.times, p.cells)]
        cells = s.loc_label[s.target]
        truth_rows += [[s.uid, int(d), int(t), int(c // ds.grid.height), int(c % ds.grid.height)]
                       for (d, t), c in zip(p.times, cells)]
    _write(run / "predictions.csv", _points_csv(rows))
    _write(run / "truth.csv", _points_csv(truth_rows))


def _evaluate_files(cfg: PipelineConfig, pred_path, truth_path, out: Path):
    preds, truths = _read_points(pred_path), _read_points(truth_path)
    rep = evaluate({u: v[:, 2:4] for u, v in preds.items()}, {u: v[:, 2:4] for u, v in truths.items()}, cfg.geobleu)
    _write(out, rep.to_json())
    print(f"mean geobleu={rep.mean_geobleu:.6f} dtw={rep.mean_dtw:.6f} users={len(rep.users)}")
    return rep


def _load_run_checkpoint(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    ds = _read_dataset(cfg)
    _stage_train(cfg, ds, _prepare_run(cfg))
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _load_config(args)
    ds = _read_dataset(cfg)
    run = _prepare_run(cfg)
    model = _load_run_checkpoint(Path(args.checkpoint)) if args.checkpoint else None
    _stage_finetune(cfg, ds, run, model)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    ds = _read_dataset(cfg)
    run = _prepare_run(cfg)
    model = _load_run_checkpoint(Path(args.checkpoint)) if args.checkpoint else None
    _stage_predict(cfg, ds, run, model)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    run = cfg.run_dir()
    pred = args.predictions or run / "predictions.csv"
    truth = args.truth or run / "truth.csv"
    out = Path(args.out) if args.out else run / "metrics.json"
    _evaluate_files(cfg, pred, truth, out)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    """synth (when no data path is configured) -> entropy -> curriculum -> train -> finetune -> predict -> eval."""
    cfg = _load_config(args)
    run = _prepare_run(cfg)
    if cfg.paths.data is None:
        _write_synth(cfg, run / "data")
        cfg_data = replace(cfg, paths=replace(cfg.paths, data=str(run / "data" / "trajectories.csv"),
                                              poi=str(run / "data" / "poi.csv")))
    else:
        cfg_data = cfg
    ds = _read_dataset(cfg_data)
    buf = io.StringIO()
    write_entropy_csv(entropy_records(ds), buf)
    _write(run / "entropy.csv", buf.getvalue())
    model = _stage_train(cfg, ds, run)
    model = _stage_finetune(cfg, ds, run, model)
    _stage_predict(cfg, ds, run, model)
    _evaluate_files(cfg, run / "predictions.csv", run / "truth.csv", run / "metrics.json")
    print(f"run directory {run}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mobcurriculum", description="Entropy-curriculum mobility prediction pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap on torch worker threads")
    p.add_argument("--deterministic", action="store_true", help="single-threaded deterministic math")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, func, help_, config=True, data=False, out=False):
        sp = sub.add_parser(name, help=help_)
        if config:
            sp.add_argument("--config", help="pipeline config JSON (default: built-in defaults)")
            sp.add_argument("--seed", type=int, default=None)
        if data:
            sp.add_argument("--data", help="trajectory CSV (uid,d,t,x,y)")
            sp.add_argument("--poi", help="POI CSV (x,y,cat,count)")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
        sp.set_defaults(func=func)
        return sp

    sp = add("init-config", cmd_init_config, "print a config template", config=False)
    sp.add_argument("--preset", choices=("paper", "desk"), default="desk")
    sp.add_argument("--out", help="write to this file instead of stdout")
    add("ingest", cmd_ingest, "validate trajectory and POI CSVs", data=True, out=True)
    sp = add("synth", cmd_synth, "generate a synthetic population", out=True)
    sp.add_argument("--users", type=int, default=None)
    sp.add_argument("--preset", choices=("paper", "desk"), default=None)
    sp = add("entropy", cmd_entropy, "per-user LZ entropy CSV and histogram", data=True, out=True)
    sp.add_argument("--bins", type=int, default=20)
    add("augment", cmd_augment, "write the four symmetry variants", data=True, out=True)
    add("curriculum", cmd_curriculum, "write the curriculum schedule CSV", data=True, out=True)
    sp = add("train", cmd_train, "curriculum pretraining on augmented training users", data=True)
    sp.add_argument("--output-dir", dest="output_dir")
    sp = add("finetune", cmd_finetune, "finetune on real training users", data=True)
    sp.add_argument("--output-dir", dest="output_dir")
    sp.add_argument("--checkpoint", help="default: model.pt in the run directory")
    sp = add("predict", cmd_predict, "predict the test users' target windows", data=True)
    sp.add_argument("--output-dir", dest="output_dir")
    sp.add_argument("--checkpoint", help="default: finetuned.pt in the run directory")
    sp = add("eval", cmd_eval, "GEO-BLEU and DTW report", data=True)
    sp.add_argument("--output-dir", dest="output_dir")
    sp.add_argument("--predictions")
    sp.add_argument("--truth")
    sp.add_argument("--out", help="report path (default: metrics.json in the run directory)")
    sp = add("fano", cmd_fano, "maximum predictability from entropy", config=False)
    sp.add_argument("--h", type=float, required=True, help="entropy in bits")
    sp.add_argument("--q", type=int, required=True, help="number of distinct locations")
    sp = add("gradcheck", cmd_gradcheck, "autograd vs central differences on a tiny model", config=False)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--params", type=int, default=200)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp = add("pipeline", cmd_pipeline, "run every stage end to end", data=True)
    sp.add_argument("--output-dir", dest="output_dir")
    sp.add_argument("--preset", choices=("paper", "desk"), default=None)
    return p


def _fail(code: int, exc: BaseException) -> int:
    msg = str(exc) or exc.__class__.__name__
    if isinstance(exc, KeyError) and exc.args:
        msg = str(exc.args[0])
    sys.stderr.write(f"error code={code} type={exc.__class__.__name__} message={json.dumps(msg)}\n")
    return code


def _threads(args) -> Optional[int]:
    if args.threads is not None:
        return args.threads
    if THREADS_ENV in os.environ:
        try:
            return int(os.environ[THREADS_ENV])
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from exc
    return None


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        threads = _threads(args)
        if threads is not None:
            if threads < 1:
                raise ConfigError("thread count must be >= 1")
            torch.set_num_threads(threads)
        with deterministic_math(args.deterministic):
            return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, exc)
    except (DataError, SampleError, MetricsError, FileNotFoundError, KeyError) as exc:
        return _fail(EXIT_DATA, exc)
    except (TrainingError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except ValueError as exc:
        return _fail(EXIT_DATA, exc)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # anything unforeseen still gets the one-line contract
        return _fail(1, exc)


if __name__ == "__main__":
    sys.exit(main())
