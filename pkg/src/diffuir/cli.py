"""Command-line interface: ``diffuir <command> [options]``.

Exit codes: 0 success, 2 bad configuration/arguments, 3 missing file,
4 checkpoint/architecture mismatch, 5 gradient check failure, 6 non-finite
loss, 1 anything else.  Failures print one line to stderr::

    error kind=<kind> code=<n> message="<text>"
"""
from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import io
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import checkpoint, gradcheck, imageio
from .config import describe_defaults, dump_config, load_config
from .degradations import TASKS, DatasetSpec, degrade, make_split, synth_clean
from .errors import CheckpointError, ConfigError, DiffuirError
from .metrics import distance_matrix, psnr
from .schedule import with_delta_bar
from .training import (ABLATION_MODES, RunConfig, apply_ablation, evaluate, model_setup,
                       new_run_dir, restore, train)

log = logging.getLogger("diffuir")

SWEEP_GRID = (0.1, 0.25, 0.5, 0.75, 0.9, 1.0)
GRADCHECK_TOL = 1e-4


def _config(args, base: RunConfig | None = None) -> RunConfig:
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "mode", None):
        overrides.append(f"train.ablation_mode={args.mode}")
    if getattr(args, "iterations", None) is not None:
        overrides.append(f"train.iterations={args.iterations}")
    if getattr(args, "steps", None) is not None:
        overrides.append(f"sampling.steps={args.steps}")
    return load_config(getattr(args, "config", None), overrides, base)


def _model(args, image_channels=3):
    """``(cfg, params, sched, cond)`` from --ckpt, or a fresh model from the config.

    Without --config, a checkpoint's own run config is the base that flags and
    --set overrides apply to.
    """
    ckpt = getattr(args, "ckpt", None)
    if not ckpt:
        cfg = _config(args)
        return (cfg,) + _setup(cfg, image_channels)
    params, meta, _ = checkpoint.load(ckpt)
    base = None
    if args.config is None and "config" in meta:
        base = RunConfig(**{**meta["config"], "resume": ""})
    cfg = _config(args, base)
    _, sched, cond = _setup(cfg, image_channels)
    fresh = model_setup(cfg, image_channels)[2]
    if params.arch != fresh.arch:
        raise CheckpointError(f"{ckpt}: architecture {params.arch} does not match the "
                              f"configured {fresh.arch}")
    return cfg, params, sched, cond


def _setup(cfg, image_channels):
    sched, cond, params = model_setup(cfg, image_channels)
    return params, sched, cond


def _out_dir(args, cfg, tag):
    root = args.out or cfg.out_dir
    return new_run_dir(root, tag)


def cmd_train(args):
    cfg = _config(args)
    if args.out:
        cfg.out_dir = args.out
    res = train(cfg, progress=lambda it, row: log.info("iter %d loss %s", it, row[1]))
    print(f"checkpoint={res.checkpoint}")
    print(f"metrics={res.metrics}")
    for task, v in res.final_eval.items():
        print(f"{task}: degraded {v['psnr_degraded']:.2f} dB -> restored {v['psnr_restored']:.2f} dB")
    return 0


def cmd_sample(args):
    cfg, params, sched, cond = _model(args)
    out = Path(args.out or "restored.ppm")
    if args.input:
        Iin = imageio.read_ppm(args.input)
        I0 = None
    else:
        if not args.task:
            raise ConfigError("sample: give --input or --task")
        seed = cfg.seed
        I0 = synth_clean(seed, cfg.data.image_size)
        Iin = degrade(args.task, I0, seed + 1).Iin
        imageio.write_ppm(out.with_name(out.stem + "_clean.ppm"), I0)
        imageio.write_ppm(out.with_name(out.stem + "_degraded.ppm"), Iin)
    restored = restore(params, sched, Iin[None], steps=cfg.sampling_steps, sampler=cfg.sampler,
                       seed=cfg.seed, conditioning=cond)[0]
    imageio.write_ppm(out, restored)
    print(f"restored={out}")
    if I0 is not None:
        print(f"psnr_degraded={psnr(Iin, I0):.4f} psnr_restored={psnr(restored, I0):.4f}")
    return 0


def cmd_eval(args):
    if args.data:
        samples = imageio.load_pairs(args.data, args.split)
        cfg, params, sched, cond = _model(args, samples[0].I0.shape[0])
    else:
        cfg, params, sched, cond = _model(args)
        samples = make_split(cfg.data, "test")
    with_ssim = min(samples[0].I0.shape[1:]) >= 11
    res = evaluate(params, sched, samples, steps=cfg.sampling_steps, sampler=cfg.sampler,
                   seed=cfg.eval_seed, conditioning=cond, with_ssim=with_ssim)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "n", "psnr_degraded", "psnr_restored", "ssim_degraded", "ssim_restored"])
    for task, v in res.items():
        w.writerow([task, v["n"], f"{v['psnr_degraded']:.6f}", f"{v['psnr_restored']:.6f}",
                    f"{v.get('ssim_degraded', float('nan')):.6f}",
                    f"{v.get('ssim_restored', float('nan')):.6f}"])
    text = buf.getvalue()
    sys.stdout.write(text)
    if args.out:
        d = _out_dir(args, cfg, "eval")
        (d / "eval.csv").write_text(text)
        print(f"csv={d / 'eval.csv'}")
    return 0


def _ablate_cell(payload):
    cfg_dict, run_dir = payload
    cfg = RunConfig(**cfg_dict)
    res = train(cfg, run_dir=run_dir)
    return {t: v["psnr_restored"] for t, v in res.final_eval.items()}


def ablation_grid(cfg: RunConfig, modes, seeds, deltas):
    """Cells ``(group, setting, seed, config)``; identical configs are listed once per label."""
    cells = []
    for seed in seeds:
        for mode in modes:
            c = RunConfig(**{**cfg.to_dict(), "ablation_mode": mode, "seed": seed})
            cells.append(("mode", mode, seed, c))
        for d in deltas:
            c = RunConfig(**{**cfg.to_dict(), "ablation_mode": "full", "delta_bar_T": d, "seed": seed})
            cells.append(("delta_bar_T", f"{d:g}", seed, c))
    return cells


def _effective_key(c: RunConfig):
    sched, cond = apply_ablation(c.ablation_mode, c.schedule())
    return (json.dumps({**c.to_dict(), "ablation_mode": None, "delta_bar_T": None}, sort_keys=True),
            float(sched.delta_bar[-1]), cond, c.seed)


def cmd_ablate(args):
    cfg = _config(args)
    modes = args.modes.split(",") if args.modes else list(ABLATION_MODES)
    bad = [m for m in modes if m not in ABLATION_MODES]
    if bad:
        raise ConfigError(f"--modes: unknown mode(s) {bad}")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0, 1, 2]
    deltas = [float(d) for d in args.deltas.split(",")] if args.deltas else list(SWEEP_GRID)
    out = _out_dir(args, cfg, "ablate")
    cells = ablation_grid(cfg, modes, seeds, deltas)
    unique = {}
    for group, setting, seed, c in cells:
        unique.setdefault(_effective_key(c), (c, out / f"{group}-{setting}-seed{seed}"))
    jobs = list(unique.items())
    threads = max(1, int(os.environ.get("DIFFUIR_THREADS", "1")))
    payloads = [(c.to_dict(), str(d)) for _, (c, d) in jobs]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
            results = list(ex.map(_ablate_cell, payloads))
    else:
        results = [_ablate_cell(p) for p in payloads]
    by_key = {k: r for (k, _), r in zip(jobs, results)}
    header = ["group", "setting", "seed"] + [f"psnr_{t}" for t in TASKS] + ["psnr_mean"]
    rows, summary = [], {}
    for group, setting, seed, c in cells:
        r = by_key[_effective_key(c)]
        vals = [r.get(t, float("nan")) for t in TASKS]
        m = float(np.nanmean(vals))
        rows.append([group, setting, seed] + [f"{v:.4f}" for v in vals] + [f"{m:.4f}"])
        summary.setdefault((group, setting), []).append(vals)
    with open(out / "ablation.csv", "w", newline="") as fh:
        csv.writer(fh).writerows([header] + rows)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "setting", "n_seeds"] + [f"psnr_{t}" for t in TASKS] + ["psnr_mean"])
        for (group, setting), vals in summary.items():
            v = np.nanmean(np.array(vals), axis=0)
            w.writerow([group, setting, len(vals)] + [f"{x:.4f}" for x in v] + [f"{np.nanmean(v):.4f}"])
    sys.stdout.write((out / "summary.csv").read_text())
    print(f"table={out / 'ablation.csv'}")
    return 0


def cmd_gradcheck(args):
    seeds = range(args.seed, args.seed + args.repeats)
    worst = 0.0
    for s in seeds:
        err, _, kinks = gradcheck.check(s)
        worst = max(worst, err)
        print(f"seed={s} max_rel_err={err:.3e} one_sided={kinks['one_sided']} "
              f"skipped={kinks['skipped']}")
    print(f"max_rel_err={worst:.3e} tol={GRADCHECK_TOL:g}")
    if not worst < GRADCHECK_TOL:
        print(f"error kind=gradcheck code=5 message=\"max relative error {worst:.3e} >= "
              f"{GRADCHECK_TOL:g}\"", file=sys.stderr)
        return 5
    return 0


def cmd_endpoint_stats(args):
    cfg = _config(args)
    sched = cfg.schedule()
    if args.delta_bar is not None:
        sched = with_delta_bar(sched, args.delta_bar)
    m = distance_matrix(sched, TASKS, n=args.n, seed=cfg.seed, size=cfg.data.image_size)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task"] + list(TASKS))
    for t, row in zip(TASKS, m):
        w.writerow([t] + [f"{x:.6g}" for x in row])
    sys.stdout.write(buf.getvalue())
    if args.out:
        d = _out_dir(args, cfg, "endpoint-stats")
        (d / "endpoint_distance.csv").write_text(buf.getvalue())
        print(f"csv={d / 'endpoint_distance.csv'}")
    return 0


def cmd_gen_data(args):
    cfg = _config(args)
    spec: DatasetSpec = cfg.data
    if args.samples_per_task:
        spec = DatasetSpec(**{**spec.__dict__, "samples_per_task": args.samples_per_task})
    root = Path(args.out or "data")
    n = 0
    for split in ("train", "test"):
        n += len(imageio.save_pairs(root, split, make_split(spec, split)))
    print(f"wrote {n // 2} pairs under {root}")
    return 0


def cmd_dump_schedule(args):
    cfg = _config(args)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "alpha", "beta", "delta", "alpha_bar", "beta_bar", "delta_bar"])
    for row in cfg.schedule().rows():
        w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_dump_config(args):
    sys.stdout.write(dump_config(_config(args)))
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="overrides train.seed")
    common.add_argument("--out", help="output directory (or file, for sample/dump-schedule)")
    p = argparse.ArgumentParser(
        prog="diffuir", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config keys and defaults:\n" + describe_defaults())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", parents=[common], help="train a denoiser")
    sp.add_argument("--mode", choices=ABLATION_MODES)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--steps", type=int, help="sampling steps used for evaluation")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", parents=[common], help="restore one image")
    sp.add_argument("--ckpt")
    sp.add_argument("--input", help="degraded PPM image")
    sp.add_argument("--task", choices=TASKS, help="synthesise a degraded image instead")
    sp.add_argument("--steps", type=int, help="sampling steps (default 3)")
    sp.add_argument("--mode", choices=ABLATION_MODES)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", parents=[common], help="per-task PSNR/SSIM")
    sp.add_argument("--ckpt")
    sp.add_argument("--data", help="dataset root written by gen-data (default: synthetic)")
    sp.add_argument("--split", default="test")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--mode", choices=ABLATION_MODES)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", parents=[common], help="component ablation + delta_bar_T sweep")
    sp.add_argument("--modes", help=f"comma list, default {','.join(ABLATION_MODES)}")
    sp.add_argument("--seeds", help="comma list, default 0,1,2")
    sp.add_argument("--deltas", help="comma list, default " + ",".join(f"{d:g}" for d in SWEEP_GRID))
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient check")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--repeats", type=int, default=1, help="number of consecutive seeds")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("endpoint-stats", parents=[common], help="pairwise endpoint distances")
    sp.add_argument("--n", type=int, default=200)
    sp.add_argument("--delta-bar", type=float, help="override delta_bar_T")
    sp.set_defaults(func=cmd_endpoint_stats)

    sp = sub.add_parser("gen-data", parents=[common], help="write synthetic PPM pairs")
    sp.add_argument("--samples-per-task", type=int)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("dump-schedule", parents=[common], help="schedule table as CSV")
    sp.set_defaults(func=cmd_dump_schedule)

    sp = sub.add_parser("dump-config", parents=[common], help="effective config")
    sp.set_defaults(func=cmd_dump_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except DiffuirError as e:
        print(f"error kind={e.kind} code={e.exit_code} message={json.dumps(str(e))}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error kind=missing-file code=3 message={json.dumps(str(e))}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
