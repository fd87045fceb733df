"""The coupled-trajectory editing loop.

Starting from the source latent, each active grid step draws fresh noise,
places a pseudo-source state on the straight source-noise path, couples a
target state to it so both velocity evaluations share one noise
realization, and moves the trajectory by the amplified difference of the
target- and source-conditioned velocities:

    z_src  = (1 - t) x_src + t N
    z_tar  = z_edit + z_src - x_src
    dv     = V(z_tar, t, target) - V(z_src, t, source)
    z_edit = z_edit + (t_next - t) * amplify(dv)

The attention hook (mask-anchored logit refinement) applies to the target
evaluation only. The first ``grid.skip`` intervals contribute no update.

Determinism and attribution: the run seed spawns one substream per step
index, so a step's noise depends only on (seed, step index, draw index).
Skipping more initial steps therefore changes the outcome only through the
removed intervals, never by shifting noise onto different steps. Coupling
is computed difference-first, ``(z_edit - x_src) + z_src``, which keeps the
coupled state exactly on the pseudo-source path while the trajectory still
sits at the source; with identical source and target conditions the whole
run is then a bitwise fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .amm import AmmConfig, amplify, contrast_map, gamma_f
from .backends import BackendRegistry, VelocityQuery
from .core import EditMask, RngStream, TimeGrid, VideoLatent, interpolate_source, sample_gaussian
from .diagnostics import DEFAULT_BINARIZE_THRESHOLD, binarize_signal, iou, magnitude_stats
from .errors import NonFiniteStateError, ShapeMismatchError, UnknownConditionError
from .sar import AttentionMaps, SarConfig, TargetTokenSet, apply_sar


@dataclass(frozen=True)
class EditConfig:
    """Everything a single edit run needs besides the source latent."""

    grid: TimeGrid
    sar: SarConfig
    amm: AmmConfig
    source_condition: str
    target_condition: str
    mask: EditMask
    j_tar: TargetTokenSet
    seed: int = 0
    n_avg: int = 1
    baseline_blend: bool = False
    record_contrast: bool = False
    record_states: bool = False
    binarize_threshold: float = DEFAULT_BINARIZE_THRESHOLD

    def __post_init__(self):
        if self.n_avg < 1:
            raise ValueError(f"n_avg must be >= 1, got {self.n_avg}")


@dataclass
class StepRecord:
    """Diagnostics for one active step; signal stats are kept both before
    and after amplification since either view can be of interest."""

    index: int
    t: float
    dt: float
    mean_abs: float
    mean_abs_amm: float
    per_frame_mean_abs: tuple[float, ...]
    iou: float
    iou_amm: float
    contrast: Optional[np.ndarray] = None
    z_src: Optional[np.ndarray] = None
    z_tar: Optional[np.ndarray] = None
    z_edit_before: Optional[np.ndarray] = None


@dataclass
class EditReport:
    seed: int
    frames: int
    gain: float
    binarize_threshold: float
    steps: list[StepRecord] = field(default_factory=list)


@dataclass
class SignalSample:
    """One step's editing signal plus the raw material that produced it."""

    dv: VideoLatent
    noises: list[VideoLatent]
    attention_maps: list[list[AttentionMaps]]
    z_src: list[VideoLatent]
    z_tar: list[VideoLatent]


def couple_target(z_edit: VideoLatent, z_src: VideoLatent, x_src: VideoLatent) -> VideoLatent:
    """Target state z_edit + z_src - x_src, grouped difference-first."""
    if not (z_edit.data.shape == z_src.data.shape == x_src.data.shape):
        raise ShapeMismatchError("coupling operands must share one shape")
    return VideoLatent((z_edit.data - x_src.data) + z_src.data)


def blend_baseline(z_edit: VideoLatent, z_reference: VideoLatent, mask: EditMask) -> VideoLatent:
    """Keep z_edit inside the mask, the reference outside; exact selection."""
    if z_edit.data.shape != z_reference.data.shape:
        raise ShapeMismatchError("blend operands must share one shape")
    if mask.shape != z_edit.data.shape[2:]:
        raise ShapeMismatchError(
            f"mask shape {mask.shape} does not match latent grid {z_edit.data.shape[2:]}"
        )
    keep = mask.data.astype(bool)[None, None]
    return VideoLatent(np.where(keep, z_edit.data, z_reference.data))


def _sar_hook(cfg: EditConfig, t: float):
    def hook(maps: AttentionMaps, layer: int) -> AttentionMaps:
        return apply_sar(maps, cfg.mask, cfg.j_tar, cfg.sar, t, cfg.grid, layer)

    return hook


def editing_signal(
    z_edit: VideoLatent,
    x_src: VideoLatent,
    t: float,
    cfg: EditConfig,
    backend: BackendRegistry,
    rng: RngStream,
    keep_states: bool = False,
) -> SignalSample:
    """Average of v_target(z_tar) - v_source(z_src) over n_avg noise draws.

    The refinement hook is installed on the target evaluation only; the
    source velocity sees raw attention. Draws accumulate in a fixed
    sequential order so the mean is reproducible.
    """
    hook = _sar_hook(cfg, t)
    acc = np.zeros(x_src.data.shape, dtype=np.float32)
    noises: list[VideoLatent] = []
    maps_per_draw: list[list[AttentionMaps]] = []
    srcs: list[VideoLatent] = []
    tars: list[VideoLatent] = []
    for _ in range(cfg.n_avg):
        noise = sample_gaussian(rng, x_src.data.shape)
        z_src = interpolate_source(x_src, noise, t)
        z_tar = couple_target(z_edit, z_src, x_src)
        v_tar, maps = backend.velocity_with_maps(
            VelocityQuery(z_tar, t, cfg.target_condition, attention_hook=hook)
        )
        v_src = backend.velocity(VelocityQuery(z_src, t, cfg.source_condition))
        acc += v_tar.data - v_src.data
        noises.append(noise)
        maps_per_draw.append(maps)
        if keep_states:
            srcs.append(z_src)
            tars.append(z_tar)
    dv = VideoLatent(acc / np.float32(cfg.n_avg))
    return SignalSample(dv, noises, maps_per_draw, srcs, tars)


def run_edit(
    x_src: VideoLatent,
    cfg: EditConfig,
    backend: BackendRegistry,
) -> tuple[VideoLatent, EditReport]:
    """Drive the editing trajectory across the grid and report per-step stats."""
    if cfg.mask.shape != x_src.data.shape[2:]:
        raise ShapeMismatchError(
            f"mask shape {cfg.mask.shape} does not match latent grid {x_src.data.shape[2:]}"
        )
    for name in (cfg.source_condition, cfg.target_condition):
        if not backend.has(name):
            raise UnknownConditionError(f"unknown condition {name!r}")
    frames = x_src.dims.frames
    gain = gamma_f(cfg.amm, frames)
    report = EditReport(
        seed=cfg.seed,
        frames=frames,
        gain=gain,
        binarize_threshold=cfg.binarize_threshold,
    )
    run_rng = RngStream(cfg.seed)
    z_edit = x_src
    for index, t, t_next in cfg.grid.intervals():
        step_rng = run_rng.substream(index)
        try:
            sample = editing_signal(
                z_edit, x_src, t, cfg, backend, step_rng, keep_states=cfg.record_states
            )
            contrast = contrast_map(sample.dv, cfg.amm.epsilon)
            dv_amm = amplify(sample.dv, contrast, gain)
            z_next = VideoLatent(z_edit.data + (t_next - t) * dv_amm.data)
        except ShapeMismatchError:
            raise
        except ValueError as exc:
            raise NonFiniteStateError(index, str(exc)) from exc
        if cfg.baseline_blend:
            reference = interpolate_source(x_src, sample.noises[0], t_next)
            z_next = blend_baseline(z_next, reference, cfg.mask)
        mean_abs, per_frame = magnitude_stats(sample.dv)
        mean_abs_amm, _ = magnitude_stats(dv_amm)
        binary = binarize_signal(sample.dv, cfg.binarize_threshold, cfg.amm.epsilon)
        binary_amm = binarize_signal(dv_amm, cfg.binarize_threshold, cfg.amm.epsilon)
        record = StepRecord(
            index=index,
            t=t,
            dt=t_next - t,
            mean_abs=mean_abs,
            mean_abs_amm=mean_abs_amm,
            per_frame_mean_abs=per_frame,
            iou=float(np.mean([iou(binary[b], cfg.mask.data) for b in range(binary.shape[0])])),
            iou_amm=float(
                np.mean([iou(binary_amm[b], cfg.mask.data) for b in range(binary_amm.shape[0])])
            ),
            contrast=contrast.data.copy() if cfg.record_contrast else None,
            z_src=sample.z_src[0].data if cfg.record_states else None,
            z_tar=sample.z_tar[0].data if cfg.record_states else None,
            z_edit_before=z_edit.data if cfg.record_states else None,
        )
        report.steps.append(record)
        z_edit = z_next
    return z_edit, report
