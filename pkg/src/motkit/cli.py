"""Command-line entry points.

Subcommands:

* ``simulate``  — generate a scenario: ground truth, detections, motion stats
* ``track``     — run the online tracker with a chosen motion matcher
* ``eval``      — score a track file against ground truth
* ``ablate``    — parameter sweeps (tau, alpha-beta, matcher, triplets)
* ``gradcheck`` — verify analytic gradients of every training kernel
* ``train-imm`` — fit the learned motion head on a rendered scenario

Exit codes: 0 success, 1 a check or evaluation failed, 2 bad usage or input.
All outputs are deterministic functions of the config and seed; files carry
a ``config_hash`` comment so results can be traced back to their settings.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .gradcheck import DEFAULT_TOL, run_all_checks
from .metrics import MotFormatError, evaluate, load_trackset, rows_to_trackset, save_mot_file
from .mlp import MlpHead
from .regressor import FeatureParams, TrainConfig, false_visibility_rate, train_motion_head
from .response import OracleNoise, PenaltyParams
from .scenario import (
    DetectorNoiseConfig,
    ScenarioConfig,
    detection_rows,
    generate_scenario,
    gt_rows,
    motion_histogram,
    render_frames,
    simulate_detections,
    write_pgm,
)
from .svgplot import histogram_chart, line_chart
from .tracker import MATCHER_NAMES, FrameInput, OnlineTracker, TrackerParams, make_matcher
from .triplets import ALL_LABELS, TripletParams, sample_triplets

TAU_SUITE = (1, 5, 15, 30, 60)
THRESHOLD_SUITE = (0.4, 0.6, 0.8)
TRIPLET_SUITE = (("P", "H"), ("P", "N"), ("P", "H", "N"))
CONFIG_SECTIONS = ("scenario", "detector", "tracker", "penalty", "oracle_noise", "train")

METRIC_COLUMNS = ("mota", "motp", "idf1", "idsw", "fn", "fp", "tp", "n_gt", "track_ap")


class CliError(Exception):
    """User-facing configuration or usage problem (exit code 2)."""


def _build(cls, data, label: str):
    """Instantiate a config dataclass from a JSON dict, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise CliError(f"{label} section must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise CliError(f"unknown {label} option(s): {', '.join(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad {label} config: {exc}") from None


def _train_config(data) -> TrainConfig:
    data = dict(data or {})
    features = _build(FeatureParams, data.pop("features", {}), "train.features")
    triplets = _build(TripletParams, data.pop("triplets", {}), "train.triplets")
    names = {f.name for f in dataclasses.fields(TrainConfig)} - {"features", "triplets"}
    unknown = sorted(set(data) - names)
    if unknown:
        raise CliError(f"unknown train option(s): {', '.join(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return TrainConfig(features=features, triplets=triplets, **kwargs)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad train config: {exc}") from None


@dataclasses.dataclass
class RunContext:
    scenario: ScenarioConfig
    detector: DetectorNoiseConfig
    tracker: TrackerParams
    penalty: PenaltyParams
    noise: OracleNoise
    train: TrainConfig

    def effective(self) -> dict:
        return {
            "scenario": dataclasses.asdict(self.scenario),
            "detector": dataclasses.asdict(self.detector),
            "tracker": dataclasses.asdict(self.tracker),
            "penalty": dataclasses.asdict(self.penalty),
            "oracle_noise": dataclasses.asdict(self.noise),
            "train": dataclasses.asdict(self.train),
        }

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.effective(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("ascii")).hexdigest()[:12]


def _load_context(args) -> RunContext:
    raw = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise CliError("config must be a JSON object")
        unknown = sorted(set(raw) - set(CONFIG_SECTIONS))
        if unknown:
            raise CliError(f"unknown config section(s): {', '.join(unknown)}")

    ctx = RunContext(
        scenario=_build(ScenarioConfig, raw.get("scenario"), "scenario"),
        detector=_build(DetectorNoiseConfig, raw.get("detector"), "detector"),
        tracker=_build(TrackerParams, raw.get("tracker"), "tracker"),
        penalty=_build(PenaltyParams, raw.get("penalty"), "penalty"),
        noise=_build(OracleNoise, raw.get("oracle_noise"), "oracle_noise"),
        train=_train_config(raw.get("train")),
    )
    seed = getattr(args, "seed", None)
    if seed is not None:
        ctx.scenario = replace(ctx.scenario, seed=seed)
        ctx.detector = replace(ctx.detector, seed=seed)
        ctx.train = replace(ctx.train, seed=seed)
    return ctx


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_pipeline(
    scenario_dict: dict,
    detector_dict: dict,
    tracker_dict: dict,
    penalty_dict: dict,
    noise_dict: dict,
    matcher_name: str,
    head_payload: dict | None = None,
):
    """Simulate, track, and collect rows; safe to call in a worker process.

    Returns (rows, gt_trackset, pred_trackset, pred_scores).
    """
    scenario_cfg = _build(ScenarioConfig, scenario_dict, "scenario")
    detector_cfg = _build(DetectorNoiseConfig, detector_dict, "detector")
    tracker_cfg = _build(TrackerParams, tracker_dict, "tracker")
    penalty = _build(PenaltyParams, penalty_dict, "penalty")
    noise = _build(OracleNoise, noise_dict, "oracle_noise")
    head = MlpHead.from_json(head_payload) if head_payload is not None else None

    scenario = generate_scenario(scenario_cfg)
    detections = simulate_detections(scenario, detector_cfg)
    needs_raster = matcher_name in ("ncc", "imm")
    rasters = render_frames(scenario) if needs_raster else None

    matcher = make_matcher(
        matcher_name,
        head=head,
        penalty=penalty,
        noise=noise,
        search_expansion=tracker_cfg.search_expansion,
    )
    tracker = OnlineTracker(matcher, tracker_cfg)
    for t in range(scenario.n_frames):
        tracker.step(
            FrameInput(
                t,
                detections[t],
                raster=rasters[t] if needs_raster else None,
                gt=scenario.gt_at(t) if matcher_name == "oracle" else None,
            )
        )
    rows = tracker.results()
    pred, scores = rows_to_trackset(rows)
    gt, _ = rows_to_trackset(gt_rows(scenario))
    return rows, gt, pred, scores


def _metric_row(gt, pred, scores) -> dict:
    report = evaluate(gt, pred, scores)
    row = report.to_dict()
    return {k: (round(v, 6) if isinstance(v, float) else v) for k, v in row.items()}


def cmd_simulate(args) -> int:
    ctx = _load_context(args)
    scenario = generate_scenario(ctx.scenario)
    detections = simulate_detections(scenario, ctx.detector)
    out = _outdir(args.out)
    comments = [f"config_hash: {ctx.config_hash}", f"seed: {ctx.scenario.seed}"]
    g_rows = gt_rows(scenario)
    d_rows = detection_rows(detections)
    save_mot_file(out / "gt.txt", g_rows, ["motkit gt"] + comments)
    save_mot_file(out / "det.txt", d_rows, ["motkit detections"] + comments)
    _write_json(out / "scenario.json", {"config_hash": ctx.config_hash, "config": ctx.effective()})
    if scenario.n_frames > ctx.scenario.fps:
        stats = motion_histogram(scenario)
        _write_json(
            out / "motion.json",
            {
                "mean_normalized_offset": round(stats.mean, 6),
                "hist": stats.hist.tolist(),
                "edges": [round(e, 6) for e in stats.edges.tolist()],
            },
        )
        histogram_chart(
            out / "motion.svg",
            stats.edges,
            stats.hist,
            title=f"per-second normalized motion ({ctx.scenario.preset})",
            xlabel="center offset / sqrt(box area)",
        )
    if args.render:
        frame_dir = _outdir(out / "frames")
        for t, frame in enumerate(render_frames(scenario)):
            write_pgm(frame_dir / f"{t:04d}.pgm", frame)
    print(
        f"simulate[{ctx.scenario.preset}]: {len(scenario.identities)} objects, "
        f"{scenario.n_frames} frames, {len(g_rows)} gt rows, {len(d_rows)} detections -> {out}"
    )
    return 0


def _load_head_payload(path) -> dict:
    try:
        with open(path, "r", encoding="ascii") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read head checkpoint: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"head checkpoint is not valid JSON: {exc}") from None


def cmd_track(args) -> int:
    ctx = _load_context(args)
    overrides = {}
    for name in ("alpha", "beta", "tau"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if overrides:
        try:
            ctx.tracker = replace(ctx.tracker, **overrides)
        except ValueError as exc:
            raise CliError(str(exc)) from None

    head_payload = None
    if args.matcher == "imm":
        if not args.head:
            raise CliError("--head is required for the imm matcher")
        head_payload = _load_head_payload(args.head)
        try:
            MlpHead.from_json(head_payload)
        except (ValueError, KeyError, TypeError) as exc:
            raise CliError(f"bad head checkpoint: {exc}") from None

    rows, gt, pred, scores = run_pipeline(
        dataclasses.asdict(ctx.scenario),
        dataclasses.asdict(ctx.detector),
        dataclasses.asdict(ctx.tracker),
        dataclasses.asdict(ctx.penalty),
        dataclasses.asdict(ctx.noise),
        args.matcher,
        head_payload,
    )
    out = _outdir(args.out)
    comments = [
        "motkit tracks",
        f"config_hash: {ctx.config_hash}",
        f"seed: {ctx.scenario.seed}",
        f"matcher: {args.matcher}",
    ]
    save_mot_file(out / "tracks.txt", rows, comments)
    report = _metric_row(gt, pred, scores)
    _write_json(out / "track_meta.json", {
        "config_hash": ctx.config_hash,
        "matcher": args.matcher,
        "n_tracks": len(pred),
        "n_rows": len(rows),
        "metrics": report,
    })
    print(f"track[{args.matcher}]: {len(pred)} tracks, {len(rows)} rows; MOTA {report['mota']:.4f} IDF1 {report['idf1']:.4f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    gt, _ = load_trackset(args.gt)
    pred, scores = load_trackset(args.pred)
    if not gt:
        raise CliError(f"{args.gt}: no ground-truth rows")
    report = evaluate(gt, pred, scores, iou_thr=args.iou)
    print(report.summary())
    if args.out:
        _write_json(args.out, report.to_dict())
    return 0


def cmd_gradcheck(args) -> int:
    results = run_all_checks(trials=args.trials, seed=args.seed, tol=args.tol)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<24} trials={r.trials:<4d} max_rel_err={r.max_rel_err:.3e} tol={r.tol:g}  {status}")
        ok = ok and r.passed
    print(f"gradcheck: {'all kernels PASS' if ok else 'FAILURES detected'}")
    return 0 if ok else 1


def cmd_train_imm(args) -> int:
    ctx = _load_context(args)
    labels = tuple(part.strip().upper() for part in args.labels.split(",") if part.strip())
    for label in labels:
        if label not in ALL_LABELS:
            raise CliError(f"unknown triplet label {label!r}; choices: P, H, N")
    if "P" not in labels:
        raise CliError("training requires positive (P) triplets")
    scenario = generate_scenario(ctx.scenario)
    rasters = render_frames(scenario)
    train_cfg = replace(ctx.train, labels=labels)
    try:
        head, history = train_motion_head(rasters, scenario.gt_by_frame(), train_cfg)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    head.save(out)
    counts = " ".join(f"{k}={v}" for k, v in sorted(history.label_counts.items()))
    print(
        f"train-imm[{'+'.join(labels)}]: {history.n_samples} samples ({counts}), "
        f"{train_cfg.epochs} epochs, final loss {history.epoch_losses[-1]:.4f} -> {out}"
    )
    return 0


def _ablate_cell(payload: str) -> str:
    """One sweep cell; JSON in/out so it pickles trivially for worker pools."""
    spec = json.loads(payload)
    if spec["kind"] == "track":
        _, gt, pred, scores = run_pipeline(
            spec["scenario"],
            spec["detector"],
            spec["tracker"],
            spec["penalty"],
            spec["noise"],
            spec["matcher"],
            spec.get("head"),
        )
        row = dict(spec["cell"])
        row.update(_metric_row(gt, pred, scores))
        return json.dumps(row)
    if spec["kind"] == "triplets":
        row = _triplet_row(spec)
        return json.dumps(row)
    raise ValueError(f"unknown cell kind {spec['kind']!r}")


def _triplet_row(spec: dict) -> dict:
    scenario_cfg = _build(ScenarioConfig, spec["scenario"], "scenario")
    train_cfg = _train_config(spec["train"])
    labels = tuple(spec["cell"]["labels"].split("+"))
    scenario = generate_scenario(scenario_cfg)
    rasters = render_frames(scenario)
    head, history = train_motion_head(rasters, scenario.gt_by_frame(), replace(train_cfg, labels=labels))

    eval_cfg = replace(scenario_cfg, seed=scenario_cfg.seed + 1000)
    eval_scenario = generate_scenario(eval_cfg)
    eval_rasters = render_frames(eval_scenario)
    rng = np.random.default_rng(train_cfg.seed + 17)
    eval_triplets = sample_triplets(
        eval_scenario.gt_by_frame(),
        eval_cfg.frame_w,
        eval_cfg.frame_h,
        train_cfg.triplets,
        rng,
        labels=ALL_LABELS,
    )
    rate = false_visibility_rate(
        head,
        eval_rasters,
        eval_triplets,
        train_cfg.features,
        train_cfg.triplets.delta,
        spec["alpha"],
    )
    row = dict(spec["cell"])
    row.update(
        {
            "false_visibility_rate": round(rate, 6),
            "n_train": history.n_samples,
            "final_loss": round(history.epoch_losses[-1], 6),
        }
    )
    return row


def _run_cells(payloads: list, workers: int) -> list:
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            encoded = list(pool.map(_ablate_cell, payloads))
    else:
        encoded = [_ablate_cell(p) for p in payloads]
    return [json.loads(e) for e in encoded]


def _write_rows(out: Path, suite: str, rows: list, cell_columns: list) -> None:
    columns = list(cell_columns)
    for col in METRIC_COLUMNS + ("false_visibility_rate", "n_train", "final_loss"):
        if any(col in row for row in rows):
            columns.append(col)
    with open(out / f"{suite}.csv", "w", encoding="ascii", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    _write_json(out / f"{suite}.json", {"suite": suite, "rows": rows})
    widths = {c: max(len(c), *(len(str(row.get(c, ""))) for row in rows)) for c in columns}
    print("  ".join(c.ljust(widths[c]) for c in columns))
    for row in rows:
        print("  ".join(str(row.get(c, "")).ljust(widths[c]) for c in columns))


def cmd_ablate(args) -> int:
    ctx = _load_context(args)
    out = _outdir(args.out)
    base = {
        "scenario": dataclasses.asdict(ctx.scenario),
        "detector": dataclasses.asdict(ctx.detector),
        "penalty": dataclasses.asdict(ctx.penalty),
        "noise": dataclasses.asdict(ctx.noise),
    }
    head_payload = _load_head_payload(args.head) if args.head else None

    payloads = []
    cell_columns: list
    if args.suite == "tau":
        matcher = args.matcher or "oracle"
        if matcher == "imm" and head_payload is None:
            raise CliError("--head is required when sweeping with the imm matcher")
        cell_columns = ["tau", "matcher"]
        for tau in TAU_SUITE:
            tracker_cfg = dataclasses.asdict(replace(ctx.tracker, tau=tau))
            payloads.append(
                json.dumps(
                    {
                        "kind": "track",
                        **base,
                        "tracker": tracker_cfg,
                        "matcher": matcher,
                        "head": head_payload,
                        "cell": {"tau": tau, "matcher": matcher},
                    }
                )
            )
    elif args.suite == "alpha-beta":
        matcher = args.matcher or "ncc"
        if matcher == "imm" and head_payload is None:
            raise CliError("--head is required when sweeping with the imm matcher")
        cell_columns = ["alpha", "beta", "matcher"]
        for alpha in THRESHOLD_SUITE:
            for beta in THRESHOLD_SUITE:
                tracker_cfg = dataclasses.asdict(replace(ctx.tracker, alpha=alpha, beta=beta))
                payloads.append(
                    json.dumps(
                        {
                            "kind": "track",
                            **base,
                            "tracker": tracker_cfg,
                            "matcher": matcher,
                            "head": head_payload,
                            "cell": {"alpha": alpha, "beta": beta, "matcher": matcher},
                        }
                    )
                )
    elif args.suite == "matcher":
        names = ["zero-motion", "kalman", "ncc", "oracle"]
        if head_payload is not None:
            names.append("imm")
        cell_columns = ["matcher"]
        for name in names:
            payloads.append(
                json.dumps(
                    {
                        "kind": "track",
                        **base,
                        "tracker": dataclasses.asdict(ctx.tracker),
                        "matcher": name,
                        "head": head_payload if name == "imm" else None,
                        "cell": {"matcher": name},
                    }
                )
            )
    elif args.suite == "triplets":
        cell_columns = ["labels"]
        for labels in TRIPLET_SUITE:
            payloads.append(
                json.dumps(
                    {
                        "kind": "triplets",
                        "scenario": dataclasses.asdict(ctx.scenario),
                        "train": dataclasses.asdict(ctx.train),
                        "alpha": ctx.tracker.alpha,
                        "cell": {"labels": "+".join(labels)},
                    }
                )
            )
    else:  # pragma: no cover - argparse restricts choices
        raise CliError(f"unknown suite {args.suite!r}")

    rows = _run_cells(payloads, args.workers)
    _write_rows(out, args.suite, rows, cell_columns)

    if args.suite == "tau":
        taus = [row["tau"] for row in rows]
        line_chart(
            out / "tau_idf1.svg",
            {"IDF1": (taus, [row["idf1"] for row in rows])},
            title="identity F1 vs lost-track patience",
            xlabel="tau (frames)",
            ylabel="IDF1",
        )
        line_chart(
            out / "tau_idsw.svg",
            {"IDsw": (taus, [row["idsw"] for row in rows])},
            title="identity switches vs lost-track patience",
            xlabel="tau (frames)",
            ylabel="switches",
        )
    elif args.suite == "alpha-beta":
        by_alpha = {}
        by_beta = {}
        for row in rows:
            by_alpha.setdefault(row["alpha"], ([], []))
            by_alpha[row["alpha"]][0].append(row["beta"])
            by_alpha[row["alpha"]][1].append(row["fn"])
            by_beta.setdefault(row["beta"], ([], []))
            by_beta[row["beta"]][0].append(row["alpha"])
            by_beta[row["beta"]][1].append(row["fp"])
        line_chart(
            out / "alpha-beta_fn.svg",
            {f"alpha={a:g}": xs_ys for a, xs_ys in sorted(by_alpha.items())},
            title="false negatives vs birth threshold",
            xlabel="beta",
            ylabel="FN",
        )
        line_chart(
            out / "alpha-beta_fp.svg",
            {f"beta={b:g}": xs_ys for b, xs_ys in sorted(by_beta.items())},
            title="false positives vs visibility threshold",
            xlabel="alpha",
            ylabel="FP",
        )
    print(f"ablate[{args.suite}]: {len(rows)} cells -> {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motkit", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file (defaults apply per section)")
        p.add_argument("--seed", type=int, help="override scenario/detector/train seeds")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    common(p)
    p.add_argument("--render", action="store_true", help="also write rendered frames as PGM images")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="run the online tracker on a simulated scenario")
    common(p)
    p.add_argument("--matcher", required=True, choices=MATCHER_NAMES)
    p.add_argument("--head", help="trained motion-head checkpoint (required for imm)")
    p.add_argument("--alpha", type=float, help="override visibility threshold")
    p.add_argument("--beta", type=float, help="override birth threshold")
    p.add_argument("--tau", type=int, help="override lost-track patience")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a track file against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth track file")
    p.add_argument("--pred", required=True, help="predicted track file")
    p.add_argument("--iou", type=float, default=0.5, help="overlap threshold (default 0.5)")
    p.add_argument("--out", help="write the metric report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a parameter sweep")
    common(p)
    p.add_argument("--suite", required=True, choices=("tau", "alpha-beta", "matcher", "triplets"))
    p.add_argument("--matcher", choices=MATCHER_NAMES, help="matcher for tau/alpha-beta sweeps")
    p.add_argument("--head", help="motion-head checkpoint for imm cells")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all training kernels")
    p.add_argument("--trials", type=int, default=100, help="random inputs per kernel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help=f"relative-error tolerance (default {DEFAULT_TOL:g})")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-imm", help="train the learned motion head")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override scenario/detector/train seeds")
    p.add_argument("--out", required=True, help="output checkpoint path (JSON)")
    p.add_argument("--labels", default="P,H,N", help="triplet classes to train on, e.g. P,H")
    p.set_defaults(func=cmd_train_imm)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, MotFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
