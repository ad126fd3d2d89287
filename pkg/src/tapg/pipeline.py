"""End-to-end wiring: dataset files, training and per-video inference."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .boundary import (
    base_forward,
    bidirectional_infer,
    build_boundary_map,
    save_heatmaps,
)
from .config import PipelineConfig
from .data import (
    FeatureSequence,
    build_windows,
    load_annotations,
    load_features,
    rescale_to_window,
    save_annotations,
    save_features,
)
from .model import ModelParams, init_model
from .postprocess import (
    ProposalCandidate,
    WindowTiming,
    assign_classes,
    fuse_scores,
    soft_nms,
)
from .relation import prb_forward, save_confidence_maps
from .sampling import SamplerConfig
from .synthetic import (
    generate_class_scores,
    generate_synthetic_dataset,
    save_class_scores,
)
from .training import fit_toy, prepare_examples


def write_dataset(out_dir, cfg: PipelineConfig) -> None:
    """Generate the synthetic dataset and write every pipeline input file."""
    sequences, annotations = generate_synthetic_dataset(
        seed=cfg.seed,
        n_videos=cfg.n_videos,
        n_classes=cfg.n_classes,
        feature_dim=cfg.feature_dim,
        snippet_range=(cfg.snippet_min, cfg.snippet_max),
        stride_frames=cfg.stride_frames,
        fps=cfg.fps,
        noise_amp=cfg.noise_amp,
        bump_height=cfg.bump_height,
        transient_height=cfg.transient_height,
        validation_fraction=cfg.validation_fraction,
    )
    scores = generate_class_scores(
        annotations, cfg.n_classes, cfg.class_score_accuracy, seed=cfg.seed
    )
    features_dir = os.path.join(out_dir, "features")
    os.makedirs(features_dir, exist_ok=True)
    save_annotations(os.path.join(out_dir, "annotations.json"), annotations)
    save_class_scores(os.path.join(out_dir, "class_scores.json"), scores)
    for fs in sequences:
        save_features(os.path.join(features_dir, f"{fs.video_id}.json"), fs)


def load_dataset(data_dir, subset: str | None = None):
    """(feature sequences, annotations) for a subset ("all" keeps everything)."""
    annotations = load_annotations(os.path.join(data_dir, "annotations.json"))
    if subset and subset != "all":
        annotations = {
            vid: ann for vid, ann in annotations.items() if ann.subset == subset
        }
    sequences = [
        load_features(os.path.join(data_dir, "features", f"{vid}.json"))
        for vid in sorted(annotations)
    ]
    return sequences, annotations


def new_model(cfg: PipelineConfig) -> ModelParams:
    return init_model(
        in_channels=cfg.feature_dim,
        base_width=cfg.base_width,
        u_width=cfg.u_width,
        sample_channels=cfg.sample_channels,
        n_samples=cfg.n_samples,
        reduced_channels=cfg.reduced_channels,
        seed=cfg.train_seed,
        attention_enabled=cfg.attention_enabled,
        extension_ratio=cfg.extension_ratio,
    )


def training_windows(sequences, annotations, cfg: PipelineConfig):
    """One window per video (rescale mode, matching inference) or sliding
    windows at the configured overlap."""
    windows = []
    for fs in sequences:
        gts = annotations[fs.video_id].instances
        if cfg.train_windows == "rescale":
            win = rescale_to_window(fs, gts, cfg.l_w, min_inside=cfg.min_inside)
            if win.gts:
                windows.append(win)
        else:
            windows.extend(
                build_windows(
                    fs, gts, cfg.l_w, overlap=cfg.window_overlap, min_inside=cfg.min_inside
                )
            )
    return windows


def train_on_dataset(data_dir, cfg: PipelineConfig):
    """Fit a fresh model on the training subset."""
    sequences, annotations = load_dataset(data_dir, "training")
    windows = training_windows(sequences, annotations, cfg)
    if not windows:
        raise ValueError("training subset produced no windows with ground truth")
    examples = prepare_examples(windows, cfg.duration_bins)
    sampler = SamplerConfig(
        boost_lambda=cfg.boost_lambda,
        pos_threshold=cfg.pos_threshold,
        neg_threshold=cfg.neg_threshold,
        seed=cfg.train_seed,
    )
    return fit_toy(
        new_model(cfg),
        examples,
        steps=cfg.steps,
        step_size=cfg.step_size,
        seed=cfg.train_seed,
        duration_bins=cfg.duration_bins,
        sampler=sampler,
        sample_count=cfg.sample_count,
        beta=cfg.beta,
        gamma=cfg.gamma,
    )


def infer_video(
    model: ModelParams,
    fs: FeatureSequence,
    cfg: PipelineConfig,
    l_w: int | None = None,
    dump_dir=None,
) -> list[ProposalCandidate]:
    """Proposals for one video: rescale, bidirectional heatmaps, boundary
    and confidence maps, score fusion, Soft-NMS."""
    l_w = l_w or cfg.l_w
    duration_bins = min(cfg.duration_bins, l_w)
    window = rescale_to_window(fs, (), l_w)

    heat = bidirectional_infer(model.cbg, window.features)
    mb = build_boundary_map(heat, duration_bins)
    maps = prb_forward(model.prb, base_forward(model.cbg, window.features), duration_bins)

    if dump_dir is not None:
        save_heatmaps(
            os.path.join(dump_dir, f"{fs.video_id}.heatmaps.json"),
            fs.video_id,
            window.window_start,
            heat,
        )
        save_confidence_maps(
            os.path.join(dump_dir, f"{fs.video_id}.confmaps.json"), fs.video_id, maps
        )

    timing = WindowTiming(
        window_start=window.window_start,
        snippet_scale=window.snippet_scale,
        seconds_per_snippet=fs.stride_frames / fs.fps,
    )
    props = fuse_scores(mb, maps, timing, top_k=cfg.top_k)
    return soft_nms(props, cfg.sigma_nms, cfg.keep_threshold, cfg.max_keep)


def infer_dataset(
    model: ModelParams,
    sequences: list[FeatureSequence],
    class_scores: dict[str, dict[str, float]],
    cfg: PipelineConfig,
    l_w: int | None = None,
    dump_dir=None,
):
    """Detections per video, gathered in video-id order regardless of the
    worker pool's completion order."""
    ordered = sorted(sequences, key=lambda fs: fs.video_id)

    def run(fs: FeatureSequence):
        props = infer_video(model, fs, cfg, l_w=l_w, dump_dir=dump_dir)
        return assign_classes(props, class_scores[fs.video_id], cfg.class_top_k)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(run, ordered))
    else:
        results = [run(fs) for fs in ordered]
    return {fs.video_id: dets for fs, dets in zip(ordered, results)}
