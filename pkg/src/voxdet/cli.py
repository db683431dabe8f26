"""``voxdet`` command line: phantom, detect, eval, compare.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .candidates import candidates_to_json
from .config import RunConfig
from .evaluate import analyze_likelihood, dumps_report, evaluate_manifest, write_curve_csv
from .metrics import permutation_test
from .phantom import DetectorParams, PhantomParams, gen_cohort
from .pipeline import extract_roi, upsample_mask
from .voxgrid import read_nrrd

log = logging.getLogger("voxdet")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _default_seed() -> int:
    env = os.environ.get("VOXDET_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"VOXDET_SEED must be an integer, got {env!r}") from None


def _add_pipeline_flags(p):
    g = p.add_argument_group("pipeline overrides (win over --config)")
    g.add_argument("--dilate-radius-mm", type=float)
    g.add_argument("--margin-mm", type=float)
    g.add_argument("--rel-threshold", type=float)
    g.add_argument("--max-lesions", type=int)
    g.add_argument("--peak-floor", type=float)
    g.add_argument("--connectivity", type=int, choices=(6, 26))
    g.add_argument("--mask-codes", type=lambda s: [int(c) for c in s.split(",")], help="comma-separated codes")


def _run_config(args) -> RunConfig:
    try:
        run = RunConfig.load(args.config) if args.config else RunConfig()
        return run.override(
            dilate_radius_mm=args.dilate_radius_mm,
            margin_mm=args.margin_mm,
            rel_threshold=args.rel_threshold,
            max_lesions=args.max_lesions,
            peak_floor=args.peak_floor,
            connectivity=args.connectivity,
            mask_codes=args.mask_codes,
            dice_min=getattr(args, "dice_min", None),
            subgroup_max_mm=getattr(args, "subgroup_max_mm", None),
        )
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None


def cmd_phantom(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        detector = DetectorParams(
            detect_prob=args.detect_prob,
            noise_sigma=args.noise_sigma,
            fp_blob_rate=args.fp_rate,
        )
        params = PhantomParams(detector=detector, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.pdac < 0 or args.normal < 0 or args.models < 1:
        raise UsageError("--pdac/--normal must be >= 0 and --models >= 1")
    manifest = gen_cohort(args.pdac, args.normal, args.models, params, args.out, jobs=args.jobs)
    log.info("wrote %d cases to %s", len(manifest["cases"]), args.out)
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _run_config(args)
    image = read_nrrd(args.image)
    coarse = read_nrrd(args.coarse_mask)
    lik = read_nrrd(args.likelihood, role="likelihood")
    seg = read_nrrd(args.segmentation) if args.segmentation else upsample_mask(coarse, image.geometry)
    roi = extract_roi(image, coarse, cfg.pipeline)
    score, cands, _ = analyze_likelihood(lik, roi.box, seg, [], cfg)
    out = {"patient_score": score, "roi": roi.box.to_dict(), "candidates": candidates_to_json(cands)}
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    run = _run_config(args)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    try:
        with open(args.manifest) as f:
            n_cases = len(json.load(f).get("cases") or [])
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {args.manifest}") from None
    if n_cases == 0:
        raise UsageError("manifest lists no cases")

    report, errors = evaluate_manifest(args.manifest, run, jobs=args.jobs)
    for err in errors:
        log.error("case failed: %s", err)
    if report is None:
        return EXIT_RUNTIME
    if errors:
        report["errors"] = errors
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps_report(report))
    for prefix, block in [("", report)] + ([("subgroup_", report["subgroup"])] if "subgroup" in report else []):
        for name in ("roc", "froc"):
            if block[name] is not None:
                write_curve_csv(block[name]["points"], out / f"{prefix}{name}.csv")
    return EXIT_RUNTIME if errors else EXIT_OK


def _metric_values(report: dict, metric: str, subgroup: bool, label: str):
    block = report.get("subgroup") if subgroup else report
    if block is None:
        raise ValueError(f"report {label} has no subgroup block")
    values = block.get("metrics", {}).get(metric)
    if not values or any(v is None for v in values):
        raise ValueError(f"report {label} has no per-model {metric} values")
    return values


def cmd_compare(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    reports = []
    for path in (args.a, args.b):
        with open(path) as f:
            reports.append(json.load(f))
    a = _metric_values(reports[0], args.metric, args.subgroup, "a")
    b = _metric_values(reports[1], args.metric, args.subgroup, "b")
    res = permutation_test(a, b, args.iterations, seed, metric=args.metric, comparisons=args.m, alpha=args.alpha)
    sys.stdout.write(json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="voxdet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a synthetic cohort")
    p.add_argument("--pdac", type=int, required=True)
    p.add_argument("--normal", type=int, required=True)
    p.add_argument("--models", type=int, default=1)
    p.add_argument("--seed", type=int, help="default: $VOXDET_SEED or 0")
    p.add_argument("--out", required=True)
    p.add_argument("--detect-prob", type=float, default=DetectorParams.detect_prob)
    p.add_argument("--noise-sigma", type=float, default=DetectorParams.noise_sigma)
    p.add_argument("--fp-rate", type=float, default=DetectorParams.fp_blob_rate)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("detect", help="extract candidates for one case")
    p.add_argument("--image", required=True)
    p.add_argument("--coarse-mask", required=True)
    p.add_argument("--likelihood", required=True)
    p.add_argument("--segmentation")
    p.add_argument("--config")
    p.add_argument("--out")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="evaluate a cohort manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--subgroup-max-mm", type=float)
    p.add_argument("--dice-min", type=float)
    p.add_argument("--jobs", type=int, default=1)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="permutation test between two reports")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--metric", choices=("auc", "pauc"), default="auc")
    p.add_argument("--iterations", type=int, default=100_000)
    p.add_argument("--seed", type=int, help="default: $VOXDET_SEED or 0")
    p.add_argument("--m", type=int, default=3, help="number of comparisons (Bonferroni)")
    p.add_argument("--alpha", type=float, default=0.025)
    p.add_argument("--subgroup", action="store_true", help="compare subgroup metrics")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"voxdet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"voxdet: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
