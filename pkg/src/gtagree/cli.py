"""Command-line interface.

Every command writes its outputs plus ``report.json`` into ``--out``.  The
report records the tool version, the fully resolved configuration, SHA-256
digests of the inputs and the results, so ``gtagree rerun report.json``
reproduces the run.

Exit codes: 0 success, 1 usage error, 2 data error, 3 STAPLE did not converge.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .errors import GtAgreeError
from .evaluation import (
    CURVE_COLUMNS,
    MatchTolerance,
    SkewRange,
    berkeley_tolerances,
    cco_cci,
    pr_curve,
    rank_detectors,
)
from .features import feature_agreement_report
from .fusion import (
    SimpleConfig,
    StapleConfig,
    fuse_excl_vote,
    fuse_simple,
    fuse_staple,
    fuse_vote,
    vote_preset,
)
from .io import (
    REPORT_SCHEMA,
    StackManifest,
    check_extents,
    dump_json,
    load_manifest,
    load_named_paths,
    read_mask,
    read_response,
    sha256_file,
    write_gray8,
    write_mask,
    write_response_csv,
    write_rgb,
)
from .masks import agreement_curve, agreement_map, smyth_bound, thin
from .plot import curves_svg
from .raters import STAT_NAMES, detect_outliers, pairwise_f1, rater_stats, ward_cluster
from .synth import detector_response, homogeneous_profiles, make_cohort, make_scene, true_error

log = logging.getLogger("gtagree")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3
SMYTH_GUIDELINE = 0.10
FUSE_METHODS = ("any", "vote", "vote75", "excl-vote", "staple", "simple")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Run:
    """Collects inputs, outputs, results and warnings of one command."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.results: dict = {}
        self.warnings: list[str] = []
        self.exit_code = EXIT_OK

    def uses(self, *paths) -> None:
        for p in paths:
            if p is not None:
                self.inputs[str(p)] = sha256_file(p)

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def warn(self, msg: str) -> None:
        if msg:
            self.warnings.append(msg)
            print(f"warning: {msg}", file=sys.stderr)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _named(spec: str) -> tuple[str, str]:
    """``NAME=PATH`` or ``PATH`` (name taken from the file stem)."""
    if "=" in spec:
        name, path = spec.split("=", 1)
        return name, str(Path(path).resolve())
    return Path(spec).stem, str(Path(spec).resolve())


def _skew(cfg) -> SkewRange:
    return SkewRange(cfg["pi1"], cfg["pi2"], cfg.get("phi"))


def _tolerance(cfg, width: int, height: int, extents):
    if cfg.get("berkeley"):
        if extents:
            return berkeley_tolerances(extents)
        return MatchTolerance.berkeley(width, height)
    return MatchTolerance(cfg.get("radius") or 0.0)


def _tolerance_json(tol) -> object:
    if isinstance(tol, MatchTolerance):
        return tol.radius
    return [t.radius for t in tol]


# --------------------------------------------------------------------------
# commands


def cmd_agree(run: _Run) -> None:
    man = load_manifest(run.cfg["manifest"])
    run.uses(run.cfg["manifest"], *man.input_paths)
    stack = man.load_stack()
    agr = agreement_map(stack)
    bound = smyth_bound(agr)
    curve = agreement_curve(agr)

    scaled = np.round(agr.counts * (255.0 / stack.n)).astype(np.uint8)
    write_gray8(run.path("agreement.pgm"), scaled)
    _write_csv(run.path("agreement_curve.csv"), ("n", "fraction"),
               ((n, float(f)) for n, f in enumerate(curve, start=1)))
    run.results.update({
        "n_annotators": stack.n,
        "smyth_bound": bound,
        "agreement_curve": [float(f) for f in curve],
    })
    if bound > SMYTH_GUIDELINE:
        run.warn(f"Smyth error bound {bound:.4f} exceeds the 10% guideline for usable annotations")
    img = man.load_image()
    if img is not None:
        rows = feature_agreement_report(img, agr)
        _write_csv(run.path("features.csv"), ("feature", "r", "p", "n", "significant", "note"),
                   ((row.feature,
                     row.result.r if row.result else None,
                     row.result.p if row.result else None,
                     row.result.n if row.result else None,
                     row.result.significant if row.result else None,
                     row.note) for row in rows))
        run.results["features"] = [
            {"feature": row.feature, "r": row.result.r if row.result else None,
             "p": row.result.p if row.result else None, "note": row.note} for row in rows
        ]


def cmd_raters(run: _Run) -> None:
    man = load_manifest(run.cfg["manifest"])
    run.uses(run.cfg["manifest"], *man.input_paths)
    stack = man.load_stack()
    f1 = pairwise_f1(stack)
    dendro = ward_cluster(f1)
    outliers = detect_outliers(f1, ddof=1 if run.cfg["sample_std"] else 0)
    stats = rater_stats(stack, tau=run.cfg["tau"])

    _write_csv(run.path("f1_matrix.csv"), ("id",) + f1.ids,
               ((a,) + tuple(float(v) for v in f1.f1[i]) for i, a in enumerate(f1.ids)))
    newick = dendro.to_newick()
    run.path("dendrogram.nwk").write_text(newick + "\n", encoding="utf-8")
    _write_csv(run.path("rater_stats.csv"), ("annotator", "tp", "fp", "fn", "tn") + STAT_NAMES,
               ((s.annotator, s.tp, s.fp, s.fn, s.tn) + tuple(getattr(s, k) for k in STAT_NAMES)
                for s in stats))
    run.warn(outliers.warning)
    if f1.degenerate:
        run.warn(f"empty annotations: {', '.join(f1.degenerate)}")
    run.results.update({
        "newick": newick,
        "outliers": list(outliers.outliers),
        "mean_difference": outliers.mean_diff,
        "outlier_threshold": outliers.threshold,
        "degenerate": list(f1.degenerate),
        "stats": [s.as_dict() for s in stats],
    })


def cmd_fuse(run: _Run) -> None:
    cfg = run.cfg
    man = load_manifest(cfg["manifest"])
    run.uses(cfg["manifest"], *man.input_paths)
    stack = man.load_stack()
    method = cfg["method"]
    res: dict = {"method": method}
    if method in ("any", "vote75"):
        mask = vote_preset(stack, method)
    elif method == "vote":
        mask = fuse_vote(stack, cfg["tau"])
    elif method == "excl-vote":
        out = fuse_excl_vote(stack, cfg["tau"], ddof=1 if cfg["sample_std"] else 0)
        mask = out.mask
        res["excluded"] = list(out.excluded)
        run.warn(out.warning)
    elif method == "staple":
        prior = cfg["staple_prior"]
        scfg = StapleConfig(prior="empirical" if prior == "empirical" else float(prior),
                            init_p=cfg["staple_init"], init_q=cfg["staple_init"],
                            tol=cfg["staple_tol"], max_iters=cfg["staple_max_iters"])
        out = fuse_staple(stack, scfg)
        mask = out.mask
        write_gray8(run.path("staple_posterior.pgm"), np.round(out.posterior * 255.0))
        res.update({
            "sensitivity": out.sensitivity, "specificity": out.specificity,
            "iterations": out.iterations, "converged": out.converged, "prior": out.prior,
        })
        if not out.converged:
            run.warn(f"STAPLE did not converge in {out.iterations} iterations")
            run.exit_code = EXIT_NONCONVERGED
    elif method == "simple":
        out = fuse_simple(stack, SimpleConfig(score=cfg["simple_score"],
                                              drop_margin=cfg["simple_margin"],
                                              max_rounds=cfg["simple_max_rounds"],
                                              min_gap=cfg["simple_min_gap"]))
        mask = out.mask
        res.update({"retained": list(out.retained), "rounds": out.rounds, "scores": out.scores})
        run.warn(out.warning)
    else:  # argparse restricts the choices
        raise ValueError(f"unknown method {method}")
    write_mask(run.path(f"gt_{method}.pgm"), mask)
    res["positive_pixels"] = int(np.count_nonzero(mask))
    run.results.update(res)


def _load_gts(run: _Run, specs, thin_gt: bool) -> dict[str, np.ndarray]:
    gts = {}
    for name, path in specs:
        run.uses(path)
        g = read_mask(path)
        gts[name] = thin(g) if thin_gt else g
    return gts


def cmd_eval(run: _Run) -> None:
    cfg = run.cfg
    responses = {}
    for name, path in cfg["response"]:
        run.uses(path)
        responses[name] = read_response(path)
    gts = _load_gts(run, cfg["gt"], cfg["thin"])
    stack = None
    extents = None
    roi = None
    if cfg.get("manifest"):
        man = load_manifest(cfg["manifest"])
        run.uses(cfg["manifest"], *man.input_paths)
        stack = man.load_stack()
        extents, roi = man.extents, stack.roi
    if cfg.get("roi"):
        run.uses(cfg["roi"])
        roi = read_mask(cfg["roi"])
    first = next(iter(responses.values()))
    h, w = first.shape
    if extents:
        check_extents(extents, w, h)
    tol = _tolerance(cfg, w, h, extents)
    skew = _skew(cfg)
    aucs: dict[str, dict[str, float]] = {}
    svg_curves = []
    for rname, resp in responses.items():
        for gname, gt in gts.items():
            curve = pr_curve(resp, gt, skew, tol, roi=roi, extents=extents,
                             max_thresholds=cfg["max_thresholds"], density=cfg["density"])
            _write_csv(run.path(f"curve_{rname}__{gname}.csv"), CURVE_COLUMNS, curve.rows())
            aucs.setdefault(rname, {})[gname] = curve.auc
            svg_curves.append((f"{rname} / {gname}", curve.recall, curve.pbar))
    run.results.update({"auc": aucs, "radius": _tolerance_json(tol)})
    if stack is not None:
        agr = agreement_map(stack)
        corr = {}
        for rname, resp in responses.items():
            cco, cci = cco_cci(resp, agr, roi)
            corr[rname] = {"cco": {"r": cco.r, "p": cco.p, "n": cco.n},
                           "cci": {"r": cci.r, "p": cci.p, "n": cci.n}}
        run.results["correlation"] = corr
    if cfg.get("svg"):
        run.path("curves.svg").write_text(curves_svg(svg_curves), encoding="utf-8")


def _gt_menu(stack, methods) -> dict[str, np.ndarray]:
    menu = {}
    for m in methods:
        if m in ("any", "vote", "vote75"):
            menu[m] = vote_preset(stack, m)
        elif m == "excl-vote":
            menu[m] = fuse_excl_vote(stack, 0.5).mask
        elif m == "staple":
            menu[m] = fuse_staple(stack).mask
        elif m == "simple":
            menu[m] = fuse_simple(stack).mask
        else:
            raise ValueError(f"unknown GT method {m!r}")
    return menu


def cmd_rank(run: _Run) -> None:
    cfg = run.cfg
    responses = {}
    run.uses(cfg["responses"])
    for name, path in load_named_paths(cfg["responses"], "responses"):
        run.uses(path)
        responses[name] = read_response(path)
    gts: dict[str, np.ndarray] = {}
    extents, roi = None, None
    if cfg.get("gts"):
        run.uses(cfg["gts"])
        gts.update(_load_gts(run, load_named_paths(cfg["gts"], "gts"), cfg["thin"]))
    if cfg.get("manifest"):
        man = load_manifest(cfg["manifest"])
        run.uses(cfg["manifest"], *man.input_paths)
        stack = man.load_stack()
        extents, roi = man.extents, stack.roi
        for name, g in _gt_menu(stack, cfg["methods"].split(",")).items():
            gts[name] = thin(g) if cfg["thin"] else g
    if not gts:
        raise ValueError("rank needs --gts and/or --manifest")
    h, w = next(iter(responses.values())).shape
    tol = _tolerance(cfg, w, h, extents)
    table = rank_detectors(responses, gts, _skew(cfg), tol, roi=roi, extents=extents)
    payload = table.as_dict()
    dump_json(run.path("ranking.json"), payload)
    run.results.update({"n_distinct_rankings": table.n_distinct, **payload})
    if any(table.ties.values()):
        run.warn("AUC ties broken by detector name")


def cmd_simulate(run: _Run) -> None:
    cfg = run.cfg
    scene = make_scene(cfg["geometry"], cfg["width"], cfg["height"], cfg["seed"],
                       n_objects=cfg["objects"], blob_radius=cfg["blob_radius"],
                       contrast=cfg["contrast"], min_visibility=cfg["min_visibility"])
    biases = [int(b) for b in str(cfg["bias"]).split(",")]
    if len(biases) == 1:
        biases = biases * cfg["annotators"]
    if len(biases) != cfg["annotators"]:
        raise ValueError("--bias needs one value or one per annotator")
    profiles = homogeneous_profiles(cfg["annotators"], cfg["p"], cfg["q"], cfg["seed"], biases)
    ids = [f"A{i + 1}" for i in range(len(profiles))]
    stack = make_cohort(scene, profiles, ids)

    write_mask(run.path("gold.pgm"), scene.gold)
    write_rgb(run.path("image.png"), scene.image)
    for a in ids:
        write_mask(run.path(f"{a}.pgm"), stack.mask(a))
    resp = detector_response(scene, cfg["detector_noise"], seed=cfg["seed"] + 1)
    write_response_csv(run.path("response.csv"), resp)
    man = StackManifest([(a, run.out / f"{a}.pgm") for a in ids], image=run.out / "image.png",
                        base=run.out)
    dump_json(run.path("manifest.json"), man.to_dict())
    dump_json(run.path("responses.json"), {"responses": [{"name": "detector", "path": "response.csv"}]})
    dump_json(run.path("gold.json"), {"gts": [{"name": "gold", "path": "gold.pgm"}]})
    run.results.update({
        "profiles": [{"id": a, "p": pr.p, "q": pr.q, "dilate_bias": pr.dilate_bias, "seed": pr.seed}
                     for a, pr in zip(ids, profiles)],
        "positive_fraction": scene.positive_fraction,
        "smyth_bound": smyth_bound(agreement_map(stack)),
        "true_error": {a: true_error(stack.mask(a), scene.gold) for a in ids},
    })


COMMANDS: dict[str, Callable[[_Run], None]] = {
    "agree": cmd_agree,
    "raters": cmd_raters,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "rank": cmd_rank,
    "simulate": cmd_simulate,
}


# --------------------------------------------------------------------------
# argument parsing


def _abs(p: str) -> str:
    return str(Path(p).resolve())


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pi1", type=float, default=0.0, help="lower skew integration limit")
    p.add_argument("--pi2", type=float, default=1.0, help="upper skew integration limit")
    p.add_argument("--phi", type=float, default=None,
                   help="positive/negative ratio (default: from each GT)")
    tol = p.add_mutually_exclusive_group()
    tol.add_argument("--radius", type=float, default=0.0, help="matching radius in pixels")
    tol.add_argument("--berkeley", action="store_true",
                     help="radius = 0.0075 x diagonal of each (sub-)image")
    p.add_argument("--thin", action="store_true", help="thin ground truths before matching")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gtagree", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"gtagree {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", required=True, type=_abs, help="output directory")
        return p

    p = command("agree", "agreement map, agreement curve, Smyth bound, feature correlations")
    p.add_argument("manifest", type=_abs)

    p = command("raters", "pairwise F1, dendrogram, outliers, statistics against consensus")
    p.add_argument("manifest", type=_abs)
    p.add_argument("--tau", type=float, default=0.5, help="consensus threshold")
    p.add_argument("--sample-std", action="store_true",
                   help="use the sample (n-1) standard deviation in the outlier rule")

    p = command("fuse", "estimate a ground truth")
    p.add_argument("manifest", type=_abs)
    p.add_argument("--method", choices=FUSE_METHODS, required=True)
    p.add_argument("--tau", type=float, default=0.5, help="vote threshold (vote, excl-vote)")
    p.add_argument("--sample-std", action="store_true")
    p.add_argument("--staple-prior", default="empirical")
    p.add_argument("--staple-init", type=float, default=0.9)
    p.add_argument("--staple-tol", type=float, default=1e-7)
    p.add_argument("--staple-max-iters", type=int, default=100)
    p.add_argument("--simple-score", choices=("kappa", "f1"), default="kappa")
    p.add_argument("--simple-margin", type=float, default=1.0)
    p.add_argument("--simple-max-rounds", type=int, default=10)
    p.add_argument("--simple-min-gap", type=float, default=0.05)

    p = command("eval", "P-bar/recall curves and AUC of detectors against ground truths")
    p.add_argument("--response", action="append", required=True, type=_named,
                   metavar="[NAME=]PATH")
    p.add_argument("--gt", action="append", required=True, type=_named, metavar="[NAME=]PATH")
    p.add_argument("--manifest", type=_abs, help="annotation manifest (ROI, extents, CCO/CCI)")
    p.add_argument("--roi", type=_abs)
    p.add_argument("--max-thresholds", type=int, default=4096)
    p.add_argument("--density", type=int, default=20, help="interpolated points per segment")
    p.add_argument("--svg", action="store_true", help="also write curves.svg")
    _add_eval_flags(p)

    p = command("rank", "rank detectors by AUC under several ground truths")
    p.add_argument("--responses", required=True, type=_abs, help="JSON {responses: [{name, path}]}")
    p.add_argument("--gts", type=_abs, help="JSON {gts: [{name, path}]}")
    p.add_argument("--manifest", type=_abs, help="annotation manifest to derive GTs from")
    p.add_argument("--methods", default="any,vote,vote75,excl-vote,staple,simple")
    _add_eval_flags(p)

    p = command("simulate", "synthetic scene, annotator cohort and detector response")
    p.add_argument("--geometry", choices=("linear", "areal"), default="areal")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--objects", type=int, default=None)
    p.add_argument("--blob-radius", type=float, default=10.0)
    p.add_argument("--contrast", choices=("uniform", "varied", "bimodal"), default="uniform")
    p.add_argument("--min-visibility", type=float, default=0.5)
    p.add_argument("--annotators", type=int, default=5)
    p.add_argument("--p", type=float, default=0.9, help="annotator sensitivity")
    p.add_argument("--q", type=float, default=0.99, help="annotator specificity")
    p.add_argument("--bias", default="0", help="dilation bias, one value or comma list")
    p.add_argument("--detector-noise", type=float, default=0.25)

    p = sub.add_parser("rerun", help="re-execute a command from its report.json")
    p.add_argument("report", type=_abs)
    return parser


def _config_from_args(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    for key in ("response", "gt"):
        if key in cfg:
            cfg[key] = [list(x) for x in cfg[key]]
    return cfg


def execute(command: str, cfg: dict) -> int:
    """Run ``command`` with a resolved configuration and write its report."""
    run = _Run(cfg)
    COMMANDS[command](run)
    report = {
        "schema": REPORT_SCHEMA,
        "tool": "gtagree",
        "version": __version__,
        "command": command,
        "config": cfg,
        "inputs": run.inputs,
        "outputs": run.outputs,
        "warnings": run.warnings,
        "results": run.results,
        "exit_code": run.exit_code,
    }
    dump_json(run.out / "report.json", json.loads(json.dumps(report, default=_jsonable)))
    return run.exit_code


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def rerun(report_path: str) -> int:
    report = json.loads(Path(report_path).read_text(encoding="utf-8"))
    for path, digest in report.get("inputs", {}).items():
        if not Path(path).exists() or sha256_file(path) != digest:
            print(f"warning: input {path} changed since the report was written", file=sys.stderr)
    return execute(report["command"], report["config"])


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            return rerun(args.report)
        return execute(args.command, _config_from_args(args))
    except (GtAgreeError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
