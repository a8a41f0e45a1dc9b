"""Command-line front end for the training pipeline and its tooling.

Exit codes: 0 success, 2 configuration error, 3 pipeline error (missing
artifacts, bad files), 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import __version__, latency, pipeline, report
from .costmodel import cost_report
from .errors import ConfigError, DivergenceError, MfasrError
from .graph import GENE_COUNT, Genotype
from .pipeline import RunConfig

_STAGE_OF = {"pretrain": ("pretrain_l1", "pretrain_iters"),
             "train-gan": ("train_gan_large", "gan_iters"),
             "distill": ("distill_gd", "distill_iters"),
             "train-supernet": ("train_supernet", "supernet_iters"),
             "finetune": ("finetune", "finetune_iters")}

_OVERRIDE_FIELDS = ("run_dir", "dataset_dir", "val_dir", "scale", "seed",
                    "scale_factor", "batch", "patch_hr", "val_every",
                    "latency_budget_us", "search_seed")


def _parse_genes(text: str) -> tuple[int, ...]:
    try:
        genes = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise ConfigError(f"genes must be comma-separated integers: {text!r}")
    return genes


def _load_config(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in _OVERRIDE_FIELDS}
    if getattr(args, "choices", None):
        overrides["choices"] = _parse_genes(args.choices)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.config:
        with open(args.config) as f:
            cfg = RunConfig.from_json(f.read(), **overrides)
    else:
        missing = [k for k in ("run_dir", "dataset_dir") if k not in overrides]
        if missing:
            raise ConfigError(
                f"--config or flags for {missing} are required")
        cfg = RunConfig(**overrides)
    iters = getattr(args, "iters", None)
    if iters is not None:
        stage_field = _STAGE_OF[args.command][1]
        # the flag sets the effective count; fields store full-scale ones
        cfg = replace(cfg, **{stage_field: iters * cfg.scale_factor})
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a run config JSON")
    p.add_argument("--run-dir", dest="run_dir")
    p.add_argument("--dataset-dir", dest="dataset_dir")
    p.add_argument("--val-dir", dest="val_dir")
    p.add_argument("--scale", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scale-factor", dest="scale_factor", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch-hr", dest="patch_hr", type=int)
    p.add_argument("--val-every", dest="val_every", type=int)
    p.add_argument("--choices", help="comma-separated channel choices")
    p.add_argument("--budget-us", dest="latency_budget_us", type=float)
    p.add_argument("--search-seed", dest="search_seed", type=int)


def _cmd_stage(args) -> int:
    cfg = _load_config(args)
    stage = _STAGE_OF[args.command][0]
    result = pipeline.run_stage(stage, cfg)
    for path in result["artifacts"]:
        print(f"wrote {path}")
    print(f"{stage}: {result['iters']} iterations done")
    return 0


def _cmd_profile_latency(args) -> int:
    cfg = _load_config(args)
    family = cfg.family()
    hw = (args.hw, args.hw) if args.hw else \
        (cfg.patch_hr // cfg.scale, cfg.patch_hr // cfg.scale)
    if args.mode == "measure":
        pairs = ((family.build(g), hw) for g in family.genotypes())
        lut = latency.profile(pairs, reps=args.reps, seed=args.lut_seed)
    else:
        model = {"flops": "flops_proportional",
                 "random": "random_seeded"}[args.mode]
        lut = latency.synth_lut(family, hw, model=model, seed=args.lut_seed,
                                alpha=args.alpha)
    out = args.out or pipeline.artifact_path(cfg, "lut")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    lut.save(out)
    pipeline.write_manifest(cfg, out, "profile_latency")
    print(f"wrote {out} ({len(lut.entries)} operator entries, "
          f"device {lut.device})")
    return 0


def _cmd_search(args) -> int:
    cfg = _load_config(args)
    best = pipeline.run_search(cfg, args.lut)
    genes = "-".join(str(g) for g in best.genotype.genes)
    print(f"best genotype {genes}: {best.fitness:.4f} dB at "
          f"{best.latency_us:.1f} us (budget {cfg.latency_budget_us:.1f} us)")
    print(f"wrote {pipeline.artifact_path(cfg, 'genotype')}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    rows = pipeline.evaluate(cfg, args.which, args.weights)
    print(f"{'image':<8} {'model':>9} {'bicubic':>9} {'delta':>8}")
    for r in rows:
        print(f"{r['image']:<8} {r['psnr_model']:>9.4f} "
              f"{r['psnr_bicubic']:>9.4f} "
              f"{r['psnr_model'] - r['psnr_bicubic']:>8.4f}")
    mean_m = sum(r["psnr_model"] for r in rows) / len(rows)
    mean_b = sum(r["psnr_bicubic"] for r in rows) / len(rows)
    print(f"{'mean':<8} {mean_m:>9.4f} {mean_b:>9.4f} {mean_m - mean_b:>8.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.eval_csv(rows, os.path.join(args.out, "eval.csv"))
        report.eval_figure(rows, os.path.join(args.out, "eval.png"))
        print(f"wrote {args.out}/eval.csv and eval.png")
    return 0


def _cmd_cost_report(args) -> int:
    cfg = _load_config(args) if (args.config or args.run_dir) else None
    if args.genes:
        genes = _parse_genes(args.genes)
        if len(genes) != GENE_COUNT:
            raise ConfigError(f"expected {GENE_COUNT} genes, got {len(genes)}")
        genotype = Genotype(genes)
    elif args.width:
        genotype = Genotype.uniform(args.width)
    elif cfg is not None:
        genotype = cfg.student_genotype()
    else:
        raise ConfigError("--genes, --width, or a config is required")
    scale = cfg.scale if cfg else (args.scale or 4)
    cfabs = cfg.cfabs_per_mfam if cfg else 2
    hw = (args.hw, args.hw) if args.hw else (64, 64)
    from .graph import build_mfanet
    graph = build_mfanet(genotype, scale, cfabs)
    rep = cost_report(graph, hw)
    print(report.cost_table(rep))
    print()
    print(json.dumps(rep.to_dict()["totals"], indent=2))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "cost.json"), "w") as f:
            json.dump(rep.to_dict(), f, indent=2)
            f.write("\n")
        report.cost_csv(rep, os.path.join(args.out, "cost.csv"))
        report.cost_figure(rep, os.path.join(args.out, "cost.png"))
        print(f"wrote {args.out}/cost.json, cost.csv, cost.png")
    return 0


def _cmd_export(args) -> int:
    cfg = _load_config(args)
    res = pipeline.export(cfg, args.out)
    genes = "-".join(str(g) for g in res["genotype"])
    print(f"wrote {res['weights']} and {res['graph']} (genotype {genes})")
    return 0


def _cmd_report(args) -> int:
    cfg = _load_config(args)
    out = args.out or os.path.join(cfg.run_dir, "report")
    written = report.render_run_report(cfg.run_dir, out)
    if not written:
        print(f"no logs found under {cfg.run_dir}/logs")
        return 0
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfasr",
        description="train, compress, and evaluate a compact "
                    "super-resolution generator")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    for name, (stage, _) in _STAGE_OF.items():
        p = subs.add_parser(name, help=f"run the {stage} stage")
        _add_common(p)
        p.add_argument("--iters", type=int,
                       help="effective iteration count for this stage")
        p.set_defaults(func=_cmd_stage)

    p = subs.add_parser("profile-latency", help="build a per-operator "
                        "latency table for the genotype space")
    _add_common(p)
    p.add_argument("--out", help="table path (default <run>/artifacts/lut.json)")
    p.add_argument("--mode", choices=("measure", "flops", "random"),
                   default="measure")
    p.add_argument("--hw", type=int, help="square input size to profile at")
    p.add_argument("--reps", type=int, default=11)
    p.add_argument("--alpha", type=float, default=1e-4)
    p.add_argument("--lut-seed", dest="lut_seed", type=int, default=0)
    p.set_defaults(func=_cmd_profile_latency)

    p = subs.add_parser("search", help="evolutionary channel search under "
                        "a latency budget")
    _add_common(p)
    p.add_argument("--lut", help="latency table path override")
    p.set_defaults(func=_cmd_search)

    p = subs.add_parser("eval", help="PSNR-Y table of the final generator "
                        "against bicubic")
    _add_common(p)
    p.add_argument("--which", choices=("train", "val"), default="val")
    p.add_argument("--weights", help="weights path override")
    p.add_argument("--out", help="directory for CSV + figure output")
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("cost-report", help="params/FLOPs/memory-access "
                        "breakdown of a generator variant")
    _add_common(p)
    p.add_argument("--genes", help="comma-separated per-stage widths")
    p.add_argument("--width", type=int, help="uniform width shorthand")
    p.add_argument("--hw", type=int, help="square input size (default 64)")
    p.add_argument("--out", help="directory for JSON/CSV/figure output")
    p.set_defaults(func=_cmd_cost_report)

    p = subs.add_parser("export", help="write final weights + graph JSON")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)

    p = subs.add_parser("report", help="render run logs to CSV + figures")
    _add_common(p)
    p.add_argument("--out", help="output directory (default <run>/report)")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        if e.diagnostics:
            print(json.dumps(e.diagnostics, indent=2), file=sys.stderr)
        return 4
    except MfasrError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
