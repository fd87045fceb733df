"""Editing-signal instrumentation: binarized-signal IoU, magnitude stats,
and frame-count sweeps.

The binarization reuses the modulation module's per-sample min-max
normalization, applied to the channel-mean absolute signal, and cuts at a
configurable threshold (default 0.5). The threshold is echoed into every
report so results are self-describing. IoU of two empty sets is defined as
1 (perfect agreement of emptiness).

No claim is made that the toy backends reproduce any particular attenuation
trend over frame counts; the sweep is bookkeeping around real runs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .amm import contrast_map, gamma_f
from .core import EditMask, VideoLatent
from .errors import ShapeMismatchError

DEFAULT_BINARIZE_THRESHOLD = 0.5

SWEEP_CSV_HEADER = ("F", "step", "mean_abs", "iou", "gamma_f")


@dataclass(frozen=True)
class SignalStats:
    step: int
    mean_abs: float
    per_frame_mean_abs: tuple[float, ...]
    iou: float

    def __post_init__(self):
        if not 0.0 <= self.iou <= 1.0:
            raise ValueError(f"iou must be in [0, 1], got {self.iou}")
        if self.mean_abs < 0.0:
            raise ValueError(f"mean_abs must be >= 0, got {self.mean_abs}")


def binarize_signal(
    dv: VideoLatent,
    threshold: float = DEFAULT_BINARIZE_THRESHOLD,
    eps: float = 1e-7,
) -> np.ndarray:
    """Per-sample binary map (B, F, H, W) of where the signal is strong.

    Channel-mean |dv| is min-max normalized per sample and cut strictly
    above ``threshold``; a constant signal therefore binarizes to all
    zeros.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    magnitude = VideoLatent(np.abs(dv.data))
    normalized = contrast_map(magnitude, eps).data[:, 0]
    return (normalized > threshold).astype(np.uint8)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary grids; empty vs empty is 1."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"iou operands differ in shape: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def magnitude_stats(dv: VideoLatent) -> tuple[float, tuple[float, ...]]:
    """(mean |dv| over all entries, mean |dv| per latent frame)."""
    mag = np.abs(dv.data)
    overall = float(mag.mean(dtype=np.float64))
    per_frame = tuple(float(mag[:, :, f].mean(dtype=np.float64)) for f in range(dv.dims.frames))
    return overall, per_frame


def signal_stats(
    dv: VideoLatent,
    mask: EditMask,
    step: int,
    threshold: float = DEFAULT_BINARIZE_THRESHOLD,
) -> SignalStats:
    """Bundle magnitude stats with the IoU of the binarized signal vs. the mask.

    With a batch, the IoU is averaged over samples.
    """
    mean_abs, per_frame = magnitude_stats(dv)
    binary = binarize_signal(dv, threshold)
    scores = [iou(binary[b], mask.data) for b in range(binary.shape[0])]
    return SignalStats(step, mean_abs, per_frame, float(np.mean(scores)))


def frame_sweep(
    family: Callable[[int], tuple[VideoLatent, EditMask]],
    base_cfg,
    backend,
    frame_counts: Sequence[int],
    threshold: float = DEFAULT_BINARIZE_THRESHOLD,
) -> list[tuple[int, int, float, float, float]]:
    """Run one edit per frame count and tabulate per-step diagnostics.

    ``family(F)`` must supply the source latent and the mask at that
    latent frame count; everything else (grid, strengths, seed) comes from
    ``base_cfg`` so runs are comparable. Rows are
    (F, step, mean_abs, iou, gamma_f).
    """
    from dataclasses import replace

    from .engine import run_edit

    rows: list[tuple[int, int, float, float, float]] = []
    for frames in frame_counts:
        x_src, mask = family(int(frames))
        if x_src.dims.frames != frames or mask.shape[0] != frames:
            raise ShapeMismatchError(
                f"family returned {x_src.dims.frames} frames, requested {frames}"
            )
        cfg = replace(base_cfg, mask=mask, binarize_threshold=threshold)
        _, report = run_edit(x_src, cfg, backend)
        gain = gamma_f(cfg.amm, frames)
        for rec in report.steps:
            rows.append((int(frames), rec.index, rec.mean_abs, rec.iou, gain))
    return rows


def sweep_rows_to_csv(rows: Sequence[tuple[int, int, float, float, float]]) -> str:
    """Render sweep rows as CSV text (header + one row per step, \\n endings)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_CSV_HEADER)
    for frames, step, mean_abs, iou_value, gain in rows:
        writer.writerow([frames, step, repr(float(mean_abs)), repr(float(iou_value)), repr(float(gain))])
    return buf.getvalue()
