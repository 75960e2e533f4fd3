"""Command-line surface: capture gating through verification reports."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from .config import ToolkitConfig, load_config
from .dataset import (
    TEMPLATE_EXT,
    FilenameError,
    ManifestEntry,
    ManifestError,
    format_filename,
    load_frame_stream,
    load_manifest,
    load_mask_png,
    load_template,
    parse_filename,
    save_mask_png,
    save_template,
)
from .evaluation import (
    Polarity,
    ScoreSet,
    e1,
    iou_dice,
    normal_deviate,
    verification_report,
)
from .gate import FeedbackCode, SessionConfig, run_session
from .geometry import BinaryMask, Ellipse
from .iriscode import InsufficientOverlapError, encode, match
from .normalize import (
    NormalizedStrip,
    enhance_strip,
    occlusion_from_masks,
    rubber_sheet,
    save_strip,
)
from .quality import MetricResult, assess
from .raster import Raster, gamma_correct, load_png, to_grayscale
from .segment import SegmentationError, classical_localize, segment_from_masks

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_POLICY = 2

_SVG_W, _SVG_H = 480, 360
_SVG_ML, _SVG_MR, _SVG_MT, _SVG_MB = 60, 20, 20, 40
_DET_TICKS = (0.0001, 0.001, 0.01, 0.05, 0.2, 0.5, 0.9)


def _write_json(obj, out_dir: Path | None, name: str) -> None:
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    if out_dir is None:
        sys.stdout.write(text)
    else:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / name).write_text(text)


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def _ellipse_json(e: Ellipse) -> dict:
    return {"cx": e.cx, "cy": e.cy, "rx": e.rx, "ry": e.ry, "angle": e.angle}


def _metric_json(m: MetricResult) -> dict:
    thr = list(m.threshold) if isinstance(m.threshold, tuple) else m.threshold
    return {
        "score": _finite_or_none(m.score),
        "threshold": thr,
        "passed": m.passed,
        "error": m.error,
    }


def _segment_entry(entry: ManifestEntry, cfg: ToolkitConfig):
    if entry.mask_iris_path and entry.mask_pupil_path:
        iris = load_mask_png(entry.mask_iris_path)
        pupil = load_mask_png(entry.mask_pupil_path)
        return segment_from_masks(iris, pupil)
    gray = to_grayscale(load_png(entry.image_path))
    return classical_localize(gray)


def _load_seg_for(args, image: Raster, cfg: ToolkitConfig):
    if args.iris_mask and args.pupil_mask:
        return segment_from_masks(
            load_mask_png(args.iris_mask), load_mask_png(args.pupil_mask)
        )
    if args.iris_mask or args.pupil_mask:
        raise ValueError("iris and pupil masks must be given together")
    return classical_localize(to_grayscale(image))


def cmd_quality(args) -> int:
    cfg = load_config(args.config)
    image = load_png(args.image)
    seg = _load_seg_for(args, image, cfg)
    report = assess(to_grayscale(image), seg, cfg.thresholds)
    payload = {
        "image": str(args.image),
        "overall_pass": report.overall_pass,
        "first_failure": report.first_failure,
        "metrics": {k: _metric_json(v) for k, v in report.metrics.items()},
    }
    _write_json(payload, Path(args.out_dir) if args.out_dir else None, "quality.json")
    return EXIT_OK if report.overall_pass else EXIT_POLICY


def cmd_gate(args) -> int:
    cfg = load_config(args.config)
    stream = load_frame_stream(args.session)
    session_cfg = SessionConfig(
        subject_id=stream.subject_id,
        session_id=stream.session_id,
        target_per_eye=cfg.target_per_eye,
        sharpness_gate=cfg.sharpness_gate,
        thresholds=cfg.thresholds,
    )
    out_dir = Path(args.out_dir) if args.out_dir else None
    result = run_session(stream, session_cfg, out_dir=out_dir)
    rejections = {code.value: 0 for code in FeedbackCode}
    for code, n in result.rejection_histogram.items():
        rejections[code.value] = n
    payload = {
        "subject": stream.subject_id,
        "session": stream.session_id,
        "eye": stream.eye,
        "complete": result.complete,
        "frames_processed": result.frames_processed,
        "accepted": [
            {"sample": format_filename(s), "path": p} for s, p in result.accepted
        ],
        "rejections": rejections,
    }
    _write_json(payload, out_dir, "session_result.json")
    return EXIT_OK if result.complete else EXIT_POLICY


def _per_sample_loop(entries, worker):
    """Run worker per manifest entry; failures are recorded, not fatal."""
    results = []
    n_failed = 0
    for entry in entries:
        stem = Path(entry.image_path).stem
        try:
            extra = worker(entry, stem)
            results.append({"sample": stem, "ok": True, **extra})
        except (OSError, ValueError) as exc:
            n_failed += 1
            results.append({"sample": stem, "ok": False, "error": str(exc)})
    return results, n_failed


def cmd_segment(args) -> int:
    cfg = load_config(args.config)
    entries = load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def worker(entry: ManifestEntry, stem: str) -> dict:
        seg = _segment_entry(entry, cfg)
        save_mask_png(seg.iris_mask, out_dir / f"{stem}_iris.png")
        save_mask_png(seg.pupil_mask, out_dir / f"{stem}_pupil.png")
        detail = {
            "source": seg.source.value,
            "degraded": seg.degraded,
            "iris": _ellipse_json(seg.iris),
            "pupil": _ellipse_json(seg.pupil),
        }
        (out_dir / f"{stem}_seg.json").write_text(
            json.dumps(detail, indent=2) + "\n"
        )
        return {"source": seg.source.value, "degraded": seg.degraded}

    results, n_failed = _per_sample_loop(entries, worker)
    _write_json(
        {"results": results, "n_ok": len(results) - n_failed, "n_failed": n_failed},
        out_dir,
        "segmentation.json",
    )
    return EXIT_OK if n_failed == 0 else EXIT_ERROR


def _normalized_strip(entry: ManifestEntry, cfg: ToolkitConfig) -> NormalizedStrip:
    seg = _segment_entry(entry, cfg)
    image = load_png(entry.image_path)
    return rubber_sheet(
        image,
        seg,
        occlusion=occlusion_from_masks(seg),
        out_w=cfg.strip_width,
        out_h=cfg.strip_height,
    )


def cmd_normalize(args) -> int:
    cfg = load_config(args.config)
    entries = load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def worker(entry: ManifestEntry, stem: str) -> dict:
        strip = _normalized_strip(entry, cfg)
        norm_path, mask_path = save_strip(strip, out_dir / stem)
        return {"norm": norm_path, "mask": mask_path}

    results, n_failed = _per_sample_loop(entries, worker)
    _write_json(
        {"results": results, "n_ok": len(results) - n_failed, "n_failed": n_failed},
        out_dir,
        "normalize.json",
    )
    return EXIT_OK if n_failed == 0 else EXIT_ERROR


def cmd_encode(args) -> int:
    cfg = load_config(args.config)
    entries = load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bank, grid = cfg.bank(), cfg.grid()

    def worker(entry: ManifestEntry, stem: str) -> dict:
        strip = _normalized_strip(entry, cfg)
        if strip.texture.channels == 3:
            strip = enhance_strip(strip, gamma=cfg.gamma)
        else:
            strip = NormalizedStrip(
                texture=gamma_correct(strip.texture, gamma=cfg.gamma),
                validity=strip.validity,
            )
        rec = encode(strip, bank, grid, sample=entry.sample)
        path = out_dir / (Path(format_filename(entry.sample)).stem + TEMPLATE_EXT)
        save_template(rec, path)
        return {"template": str(path)}

    results, n_failed = _per_sample_loop(entries, worker)
    _write_json(
        {"results": results, "n_ok": len(results) - n_failed, "n_failed": n_failed},
        out_dir,
        "encode.json",
    )
    return EXIT_OK if n_failed == 0 else EXIT_ERROR


def cmd_match(args) -> int:
    cfg = load_config(args.config)
    tdir = Path(args.templates)
    paths = sorted(tdir.glob(f"*{TEMPLATE_EXT}"))
    if len(paths) < 2:
        raise ValueError(f"need at least two templates in {tdir}")
    records = [(p.stem, load_template(p)) for p in paths]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    skipped = 0
    with (out_dir / "scores.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_a", "sample_b", "hd", "shift", "bits"])
        for i in range(len(records)):
            for j in range(i + 1, len(records)):
                name_a, rec_a = records[i]
                name_b, rec_b = records[j]
                try:
                    score = match(
                        rec_a,
                        rec_b,
                        max_shift=cfg.max_shift,
                        min_bits_fraction=cfg.min_bits_fraction,
                    )
                except InsufficientOverlapError:
                    skipped += 1
                    continue
                writer.writerow(
                    [
                        name_a,
                        name_b,
                        f"{score.hd:.9f}",
                        score.best_shift,
                        score.compared_bits,
                    ]
                )
    if skipped:
        print(f"skipped {skipped} pairs with insufficient overlap", file=sys.stderr)
    return EXIT_OK


def _read_scores(path: str) -> list[tuple[str, str, float]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"sample_a", "sample_b", "hd"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise ValueError(f"scores file {path} lacks columns {sorted(needed)}")
        for row in reader:
            rows.append((row["sample_a"], row["sample_b"], float(row["hd"])))
    if not rows:
        raise ValueError(f"scores file {path} is empty")
    return rows


def _det_svg(points, eer_value: float, eer_threshold: float) -> str:
    """Hand-rolled DET plot on normal-deviate axes with an EER marker."""
    plot_w = _SVG_W - _SVG_ML - _SVG_MR
    plot_h = _SVG_H - _SVG_MT - _SVG_MB
    devs = [(normal_deviate(p.fmr), normal_deviate(p.fnmr)) for p in points]
    lo = min(min(d) for d in devs) - 0.2
    hi = max(max(d) for d in devs) + 0.2

    def sx(v: float) -> float:
        return _SVG_ML + (v - lo) / (hi - lo) * plot_w

    def sy(v: float) -> float:
        return _SVG_MT + (hi - v) / (hi - lo) * plot_h

    path = " ".join(f"{sx(dx):.2f},{sy(dy):.2f}" for dx, dy in devs)
    ticks = []
    for p in _DET_TICKS:
        d = normal_deviate(p)
        if not lo <= d <= hi:
            continue
        label = f"{100 * p:g}%"
        x, y = sx(d), sy(d)
        ticks.append(
            f'<line x1="{x:.2f}" y1="{_SVG_MT + plot_h}" x2="{x:.2f}" '
            f'y2="{_SVG_MT + plot_h + 4}" stroke="black"/>'
            f'<text x="{x:.2f}" y="{_SVG_MT + plot_h + 16}" font-size="10" '
            f'text-anchor="middle">{label}</text>'
            f'<line x1="{_SVG_ML - 4}" y1="{y:.2f}" x2="{_SVG_ML}" y2="{y:.2f}" '
            f'stroke="black"/>'
            f'<text x="{_SVG_ML - 6}" y="{y + 3:.2f}" font-size="10" '
            f'text-anchor="end">{label}</text>'
        )
    ex, ey = sx(normal_deviate(eer_value)), sy(normal_deviate(eer_value))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" '
        f'height="{_SVG_H}" viewBox="0 0 {_SVG_W} {_SVG_H}">'
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>'
        f'<rect x="{_SVG_ML}" y="{_SVG_MT}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="black"/>'
        + "".join(ticks)
        + f'<polyline points="{path}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>'
        + f'<circle id="eer-marker" cx="{ex:.2f}" cy="{ey:.2f}" r="4" fill="#d62728"/>'
        + f'<text x="{ex + 8:.2f}" y="{ey - 6:.2f}" font-size="11">'
        f"EER {100 * eer_value:.3f}% @ {eer_threshold:.4f}</text>"
        + f'<text x="{_SVG_ML + plot_w / 2:.0f}" y="{_SVG_H - 6}" font-size="12" '
        f'text-anchor="middle">FMR</text>'
        + f'<text x="14" y="{_SVG_MT + plot_h / 2:.0f}" font-size="12" '
        f'text-anchor="middle" transform="rotate(-90 14 {_SVG_MT + plot_h / 2:.0f})">'
        f"FNMR</text>"
        + "</svg>\n"
    )


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    rows = _read_scores(args.scores)
    genuine, impostor = [], []
    for name_a, name_b, hd in rows:
        a = parse_filename(name_a + ".png")
        b = parse_filename(name_b + ".png")
        if a.subject_id == b.subject_id:
            if a.eye == b.eye:
                genuine.append(hd)
        else:
            impostor.append(hd)
    scores = ScoreSet(genuine, impostor, Polarity.DISTANCE)
    report = verification_report(scores, cfg.far_targets, cfg.det_points)
    out_dir = Path(args.out_dir) if args.out_dir else None
    payload = report.to_json_dict()
    payload["dprime"] = _finite_or_none(payload["dprime"])
    _write_json(payload, out_dir, "verification.json")
    if out_dir is not None:
        with (out_dir / "det.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "fmr", "fnmr"])
            for p in report.det:
                writer.writerow([f"{p.threshold:.9f}", f"{p.fmr:.9f}", f"{p.fnmr:.9f}"])
        (out_dir / "det.svg").write_text(
            _det_svg(report.det, report.eer, report.eer_threshold)
        )
    return EXIT_OK


def cmd_seg_eval(args) -> int:
    cfg = load_config(args.config)
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    names = sorted(
        {p.name for p in pred_dir.glob("*.png")} | {p.name for p in gt_dir.glob("*.png")}
    )
    if not names:
        raise ValueError("no PNG masks found to compare")
    pairs = []
    by_class: dict[str, list[tuple[float, float, float]]] = {}
    n_failed = 0
    for name in names:
        stem = Path(name).stem
        cls = "iris" if stem.endswith("_iris") else (
            "pupil" if stem.endswith("_pupil") else "all"
        )
        try:
            pred_path, gt_path = pred_dir / name, gt_dir / name
            if not pred_path.exists():
                raise ValueError("missing prediction")
            if not gt_path.exists():
                raise ValueError("missing ground truth")
            prob = to_grayscale(load_png(pred_path))
            gt = load_mask_png(gt_path)
            pred_mask = BinaryMask(prob.data >= cfg.map_threshold)
            iou, dice = iou_dice(pred_mask, gt)
            err = e1(prob, gt)
            pairs.append(
                {"name": name, "class": cls, "iou": iou, "dice": dice, "e1": err}
            )
            by_class.setdefault(cls, []).append((iou, dice, err))
        except (OSError, ValueError) as exc:
            n_failed += 1
            pairs.append({"name": name, "class": cls, "error": str(exc)})
    summary = {
        cls: {
            "n": len(vals),
            "mean_iou": sum(v[0] for v in vals) / len(vals),
            "mean_dice": sum(v[1] for v in vals) / len(vals),
            "mean_e1": sum(v[2] for v in vals) / len(vals),
        }
        for cls, vals in sorted(by_class.items())
    }
    _write_json(
        {"pairs": pairs, "summary": summary, "n_failed": n_failed},
        Path(args.out_dir) if args.out_dir else None,
        "seg_eval.json",
    )
    return EXIT_OK if n_failed == 0 else EXIT_ERROR


def _add_common(sub: argparse.ArgumentParser, jobs: bool = False) -> None:
    sub.add_argument("--config", help="config JSON path (else $VIRIS_CONFIG, else defaults)")
    sub.add_argument("--out-dir", help="directory for reports and artifacts")
    if jobs:
        sub.add_argument("--jobs", type=int, default=1, help="worker count (ordering stays deterministic)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viris",
        description="Visible-light iris toolkit: quality gating, segmentation, "
        "encoding, matching, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quality", help="score one image against the ISO metrics")
    p.add_argument("image")
    p.add_argument("--iris-mask")
    p.add_argument("--pupil-mask")
    _add_common(p)
    p.set_defaults(func=cmd_quality)

    p = sub.add_parser("gate", help="replay a capture session through the gate")
    p.add_argument("session", help="session JSON with ordered frames")
    _add_common(p)
    p.set_defaults(func=cmd_gate)

    p = sub.add_parser("segment", help="segment every manifest sample")
    p.add_argument("--manifest", required=True)
    _add_common(p, jobs=True)
    p.set_defaults(func=cmd_segment, out_dir_required=True)

    p = sub.add_parser("normalize", help="unwrap iris strips for manifest samples")
    p.add_argument("--manifest", required=True)
    _add_common(p, jobs=True)
    p.set_defaults(func=cmd_normalize, out_dir_required=True)

    p = sub.add_parser("encode", help="build templates for manifest samples")
    p.add_argument("--manifest", required=True)
    _add_common(p, jobs=True)
    p.set_defaults(func=cmd_encode, out_dir_required=True)

    p = sub.add_parser("match", help="all-vs-all template comparison to scores.csv")
    p.add_argument("--templates", required=True, help="directory of .tpl files")
    _add_common(p, jobs=True)
    p.set_defaults(func=cmd_match, out_dir_required=True)

    p = sub.add_parser("eval", help="verification metrics from a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", help="unused; samples are parsed from score rows")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("seg-eval", help="mask accuracy: predictions vs ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_seg_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    if getattr(args, "out_dir_required", False) and not args.out_dir:
        print(f"error: {args.command} requires --out-dir", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except (OSError, ValueError, FilenameError, ManifestError, SegmentationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
