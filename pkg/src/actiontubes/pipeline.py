"""File-to-file pipeline stages over one working directory.

Every stage reads its inputs from the directory, transforms them, and
writes its outputs back under fixed names, so running a stage twice on
the same inputs produces byte-identical files.  Per-video work can run
on a bounded thread pool; results are keyed by video and written in
canonical order, so the thread count never changes output bytes.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import formats
from .config import (PipelineConfig, cell_layout, eval_config,
                     scenario_config, tracker_config)
from .errors import InputError
from .evaluation import EvalReport, evaluate
from .footprint import build_footprint_map, prune_drifted
from .fusion import late_fuse, merge_early_late, saliency_prune
from .model import BoundingBox, Detection, FrameInterval, Tube
from .scoring import prune_overlapped, score_clips, score_tube, slice_clips
from .synth import SyntheticFeaturizer, SyntheticRegionScorer, generate
from .temporal import localize
from .tracker import PrecomputedMatcher, build_tubes, build_tubes_neighborhood

FILE_GT = "gt_tubes.tsv"
FILE_DETECTIONS = {"static": "detections_static.tsv",
                   "flow": "detections_flow.tsv",
                   "early": "detections_early.tsv"}
FILE_FUSED = "detections_fused.tsv"
FILE_PROPOSALS = "proposals.tsv"
FILE_SALIENT = "proposals_salient.tsv"
FILE_MATCHES = "matches.tsv"
FILE_FLOW = "flow.atb"
FILE_WEIGHTS = "weights.atb"
FILE_GMM = "gmm.atb"
FILE_ALPHAS = "alphas.atb"
FILE_DRIFT = "drift_tubes.tsv"
FILE_TRACKED = "tubes_tracked.tsv"
FILE_SCORED = "tubes_scored.tsv"
FILE_CLIP_SCORES = "clip_scores.tsv"
FILE_PRUNED = "tubes_pruned.tsv"
FILE_FINAL = "tubes_final.tsv"
FILE_METRICS = "metrics.tsv"
FILE_REPORT = "report.txt"


def _require(directory: Path, name: str, producer: str) -> Path:
    path = directory / name
    if not path.exists():
        raise InputError(
            f"missing input file {name!r} in {directory}; run the "
            f"{producer!r} command first")
    return path


def _map_videos(keys: Sequence, fn: Callable, threads: int) -> dict:
    """Apply ``fn`` per key, possibly on a pool; result order is fixed."""
    keys = list(keys)
    if threads <= 1 or len(keys) <= 1:
        return {key: fn(key) for key in keys}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {key: pool.submit(fn, key) for key in keys}
        return {key: future.result() for key, future in futures.items()}


def _group_by_frame(detections) -> dict[int, list[Detection]]:
    out: dict[int, list[Detection]] = {}
    for det in detections:
        out.setdefault(det.frame_index, []).append(det)
    return out


def run_synth(directory: Path, config: PipelineConfig) -> dict:
    """Generate the scenario and write every input artifact."""
    directory.mkdir(parents=True, exist_ok=True)
    scenario = scenario_config(config)
    bundle = generate(scenario)
    formats.write_gt_tubes(directory / FILE_GT, bundle.all_gt())
    for stream, name in FILE_DETECTIONS.items():
        formats.write_detections(
            directory / name,
            {v.video_id: v.detections[stream] for v in bundle.videos})
    formats.write_proposals(directory / FILE_PROPOSALS,
                            {v.video_id: v.proposals for v in bundle.videos})
    matcher = bundle.matcher()
    width, height = scenario.frame_size
    full = BoundingBox(0.0, 0.0, float(width), float(height))

    def pairs_for(index):
        video = bundle.videos[index]
        out = {}
        for frame in list(video.extent.frames())[:-1]:
            out[(video.video_id, frame, frame + 1)] = matcher.match(
                video.video_id, frame, frame + 1, full)
        return out

    pairs = {}
    for part in _map_videos(range(len(bundle.videos)), pairs_for,
                            config["run.threads"]).values():
        pairs.update(part)
    formats.write_matches(directory / FILE_MATCHES, pairs)
    formats.write_weights(directory / FILE_WEIGHTS, bundle.weights)
    if bundle.gmm is not None:
        formats.write_gmm(directory / FILE_GMM, bundle.gmm)
    if bundle.alphas is not None:
        formats.write_alphas(directory / FILE_ALPHAS, bundle.alphas)
    if scenario.with_flow:
        formats.write_flow(directory / FILE_FLOW,
                           {v.video_id: v.flow for v in bundle.videos})
    drift = [t for tubes in bundle.drift_tubes.values() for t in tubes]
    if drift:
        formats.write_tubes(directory / FILE_DRIFT, drift)
    return {"videos": len(bundle.videos),
            "gt_tubes": len(bundle.all_gt()),
            "drift_tubes": len(drift)}


def run_fuse(directory: Path, config: PipelineConfig) -> dict:
    """Combine the detection streams; prune static proposals by flow."""
    streams = {
        stream: formats.read_detections(
            _require(directory, name, "synth"))
        for stream, name in FILE_DETECTIONS.items()}
    video_ids = sorted(set().union(*[set(s) for s in streams.values()]))
    overlap = config["fuse.nms_overlap"]
    enabled = config["fuse.enabled"]

    def fuse_one(video_id):
        by_frame = {stream: _group_by_frame(streams[stream].get(video_id, []))
                    for stream in streams}
        frames = sorted(set().union(*[set(b) for b in by_frame.values()]))
        out = []
        for frame in frames:
            static = by_frame["static"].get(frame, [])
            flow = by_frame["flow"].get(frame, [])
            early = by_frame["early"].get(frame, [])
            if not enabled:
                out.extend([*static, *flow, *early])
                continue
            late = late_fuse(static, flow, overlap)
            out.extend(merge_early_late(early, late, overlap))
        return out

    fused = _map_videos(video_ids, fuse_one, config["run.threads"])
    formats.write_detections(directory / FILE_FUSED, fused)
    result = {"videos": len(video_ids),
              "detections": sum(len(d) for d in fused.values())}
    flow_path = directory / FILE_FLOW
    if enabled and flow_path.exists():
        proposals = formats.read_proposals(
            _require(directory, FILE_PROPOSALS, "synth"))
        grids = formats.read_flow(flow_path)
        threshold = config["fuse.min_mean_magnitude"]

        def prune_one(video_id):
            frames = proposals.get(video_id, {})
            video_grids = grids.get(video_id, {})
            out = {}
            for frame, props in frames.items():
                grid = video_grids.get(frame)
                if grid is None:
                    out[frame] = props
                else:
                    out[frame] = tuple(saliency_prune(props, grid, threshold))
            return out

        salient = _map_videos(sorted(proposals), prune_one,
                              config["run.threads"])
        formats.write_proposals(directory / FILE_SALIENT, salient)
        result["salient_proposals"] = sum(
            len(p) for frames in salient.values() for p in frames.values())
    return result


def run_track(directory: Path, config: PipelineConfig) -> dict:
    """Grow tubes from the fused detections, one pass per video."""
    detections = formats.read_detections(
        _require(directory, FILE_FUSED, "fuse"))
    salient_path = directory / FILE_SALIENT
    if salient_path.exists():
        proposals = formats.read_proposals(salient_path)
    else:
        proposals = formats.read_proposals(
            _require(directory, FILE_PROPOSALS, "synth"))
    ground_truth = formats.read_gt_tubes(
        _require(directory, FILE_GT, "synth"))
    scenario = scenario_config(config)
    gt_map: dict[str, list] = {}
    for gt in ground_truth:
        gt_map.setdefault(gt.video_id, []).append(gt)
    scorer = SyntheticRegionScorer(scenario, gt_map)
    tcfg = tracker_config(config)
    baseline = config["track.baseline"]
    matcher = None
    if not baseline:
        matcher = PrecomputedMatcher(formats.read_matches(
            _require(directory, FILE_MATCHES, "synth")))

    def track_one(video_id):
        by_frame = _group_by_frame(detections.get(video_id, []))
        if not by_frame:
            return []
        frames = set(by_frame) | set(proposals.get(video_id, {}))
        extent = FrameInterval(min(frames), max(frames) + 1)
        props = proposals.get(video_id, {})
        if baseline:
            return build_tubes_neighborhood(
                video_id, by_frame, props, extent, scorer, tcfg,
                search_radius=config["track.search_radius"])
        return build_tubes(video_id, by_frame, props, extent, matcher,
                           scorer, tcfg)

    video_ids = sorted(detections)
    tracked = _map_videos(video_ids, track_one, config["run.threads"])
    tubes = [tube for video_id in video_ids for tube in tracked[video_id]]
    formats.write_tubes(directory / FILE_TRACKED, tubes)
    return {"videos": len(video_ids), "tubes": len(tubes)}


def run_score(directory: Path, config: PipelineConfig) -> dict:
    """Label each tube from its clip features; injected tubes join here."""
    tubes = formats.read_tubes(_require(directory, FILE_TRACKED, "track"))
    drift_path = directory / FILE_DRIFT
    if drift_path.exists():
        tubes = tubes + formats.read_tubes(drift_path)
    weights = formats.read_weights(
        _require(directory, FILE_WEIGHTS, "synth"))
    ground_truth = formats.read_gt_tubes(
        _require(directory, FILE_GT, "synth"))
    scenario = scenario_config(config)
    gt_map: dict[str, list] = {}
    for gt in ground_truth:
        gt_map.setdefault(gt.video_id, []).append(gt)
    indices = {video_id: i for i, video_id in enumerate(sorted(gt_map))}
    featurizer = SyntheticFeaturizer(scenario, gt_map, indices)
    clip_length = config["clip.length"]

    by_video: dict[str, list[Tube]] = {}
    for tube in tubes:
        by_video.setdefault(tube.video_id, []).append(tube)

    def score_one(video_id):
        out = []
        for tube in by_video[video_id]:
            intervals = slice_clips(tube.interval(), clip_length)
            features = featurizer.clip_features(
                video_id, {e.frame_index: e.box for e in tube.entries},
                intervals)
            clips = score_clips(features, weights, intervals, clip_length)
            ts = score_tube(tube, clips, label=tube.label)
            out.append((tube.with_label(ts.label, ts.score), clips))
        return out

    scored = _map_videos(sorted(by_video), score_one, config["run.threads"])
    labeled = [tube for pairs in scored.values() for tube, _ in pairs]
    clip_map = {(tube.video_id, tube.tube_id): clips
                for pairs in scored.values() for tube, clips in pairs}
    formats.write_tubes(directory / FILE_SCORED, labeled)
    formats.write_clip_scores(directory / FILE_CLIP_SCORES, clip_map)
    return {"tubes": len(labeled)}


def _scored_pairs(tubes: Sequence[Tube],
                  clip_map: Mapping) -> list[tuple[Tube, object]]:
    pairs = []
    for tube in tubes:
        clips = clip_map.get((tube.video_id, tube.tube_id))
        if clips is None:
            raise InputError(
                f"no clip scores for tube {tube.tube_id!r} in "
                f"{tube.video_id!r}; rerun the 'score' command")
        pairs.append((tube, score_tube(tube, clips, label=tube.label)))
    return pairs


def run_prune(directory: Path, config: PipelineConfig) -> dict:
    """Drop overlap duplicates, then tubes off their class footprint."""
    tubes = formats.read_tubes(_require(directory, FILE_SCORED, "score"))
    clip_map = formats.read_clip_scores(
        _require(directory, FILE_CLIP_SCORES, "score"))
    pairs = _scored_pairs(tubes, clip_map)
    removed_overlap = removed_footprint = 0
    if config["prune.enabled"]:
        kept = prune_overlapped(pairs, config["prune.st_overlap"])
        removed_overlap = len(pairs) - len(kept)
        pairs = kept
    alphas_path = directory / FILE_ALPHAS
    if config["prune.footprint"] and alphas_path.exists():
        fmap = build_footprint_map(formats.read_alphas(alphas_path),
                                   cell_layout(config))
        frame_size = (float(config["synth.frame_width"]),
                      float(config["synth.frame_height"]))
        kept = prune_drifted(pairs, fmap, frame_size)
        removed_footprint = len(pairs) - len(kept)
        pairs = kept
    formats.write_tubes(directory / FILE_PRUNED, [t for t, _ in pairs])
    return {"tubes": len(pairs), "removed_overlap": removed_overlap,
            "removed_footprint": removed_footprint}


def run_localize(directory: Path, config: PipelineConfig) -> dict:
    """Trim each tube to its confident clip span."""
    tubes = formats.read_tubes(_require(directory, FILE_PRUNED, "prune"))
    if not config["localize.enabled"]:
        formats.write_tubes(directory / FILE_FINAL, tubes)
        return {"tubes": len(tubes), "removed": 0}
    clip_map = formats.read_clip_scores(
        _require(directory, FILE_CLIP_SCORES, "score"))
    tau = config["localize.tau"]
    mode = config["localize.mode"]
    out = []
    for tube in tubes:
        clips = clip_map.get((tube.video_id, tube.tube_id))
        if clips is None:
            raise InputError(
                f"no clip scores for tube {tube.tube_id!r} in "
                f"{tube.video_id!r}; rerun the 'score' command")
        result = localize(tube, clips, tau=tau, mode=mode)
        if result is not None:
            out.append(result)
    formats.write_tubes(directory / FILE_FINAL, out)
    return {"tubes": len(out), "removed": len(tubes) - len(out)}


def _metric_rows(report: EvalReport, config: PipelineConfig) -> list[tuple]:
    rows = []
    for sigma in report.sigmas:
        s = repr(float(sigma))
        for label, ap in report.video_ap[sigma].items():
            rows.append(("ap", "video", s, str(label), repr(float(ap))))
        for label, ap in report.frame_ap[sigma].items():
            rows.append(("ap", "frame", s, str(label), repr(float(ap))))
        rows.append(("map", "video", s, "-",
                     repr(float(report.video_map[sigma]))))
        rows.append(("map", "frame", s, "-",
                     repr(float(report.frame_map[sigma]))))
        rows.append(("auc", "video", s, "-",
                     repr(float(report.auc[sigma]))))
    rows.append(("recall_track", "video",
                 repr(float(config["eval.recall_sigma"])), "-",
                 repr(float(report.recall_track))))
    taxonomy_sigma = repr(float(config["eval.taxonomy_sigma"]))
    fc = report.false_counts
    for name, value in (("false_cls", fc.false_cls),
                        ("false_bbox", fc.false_bbox),
                        ("false_neg", fc.false_neg),
                        ("true_positives", fc.true_positives)):
        rows.append((name, "frame", taxonomy_sigma, "-", str(value)))
    return rows


def run_evaluate(directory: Path, config: PipelineConfig) -> EvalReport:
    """Score the final tubes against the ground truth and write reports."""
    tubes = formats.read_tubes(_require(directory, FILE_FINAL, "localize"))
    ground_truth = formats.read_gt_tubes(
        _require(directory, FILE_GT, "synth"))
    report = evaluate(tubes, ground_truth, eval_config(config))
    formats.write_metrics(directory / FILE_METRICS,
                          _metric_rows(report, config))
    with open(directory / FILE_REPORT, "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(report.to_text() + "\n")
    return report


STAGES = {
    "synth": run_synth,
    "fuse": run_fuse,
    "track": run_track,
    "score": run_score,
    "prune": run_prune,
    "localize": run_localize,
    "evaluate": run_evaluate,
}

PIPELINE_ORDER = ("synth", "fuse", "track", "score", "prune", "localize",
                  "evaluate")


def run_pipeline(directory: Path, config: PipelineConfig) -> EvalReport:
    """All stages in order on one directory; returns the final report."""
    result = None
    for stage in PIPELINE_ORDER:
        result = STAGES[stage](directory, config)
    return result
