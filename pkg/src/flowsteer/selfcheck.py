"""Property and oracle gate: every shipped guarantee, runnable on demand.

Each criterion is a self-contained check with its own frozen seeds. Where a
formula is being verified, the expected value comes from an independent
route: a Monte-Carlo conditional-expectation estimate for the closed-form
velocity, a scalar Euler integration written directly from the formulas
for the coupled editing dynamics, and direct set arithmetic for the metric
identities. "Bitwise" checks compare float values exactly.

The null-edit criterion runs both backends through the full loop with
refinement and amplification engaged. On the attention backend the
refinement strengths are zero for this check: the hook shapes only the
target velocity, so any nonzero strength intentionally breaks the
source/target symmetry the fixed point relies on, while zero strengths
still exercise the entire gated code path.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .amm import AmmConfig, apply_amm, contrast_map, gamma_f
from .backends import BackendRegistry, GaussianCondition, VelocityQuery, make_toy_condition_pair
from .config import parse_config_text, with_out_dir
from .core import EditMask, RngStream, TimeGrid, VideoLatent
from .diagnostics import iou
from .engine import EditConfig, run_edit
from .metrics import FlowField, ToyFrameEmbedder, frame_consistency, masked_psnr, warp_error
from .runner import run_batch
from .sar import (
    AttentionMaps,
    SarConfig,
    TargetTokenSet,
    spatiotemporal_modulation,
    text_token_modulation,
)


@dataclass
class CriterionResult:
    number: int
    name: str
    ok: bool
    detail: str
    seconds: float


def _random_sar_case(rng: RngStream, max_voxels=16, max_tokens=6):
    voxels = 4 + int(rng.uniforms(1)[0] * (max_voxels - 4))
    tokens = 2 + int(rng.uniforms(1)[0] * (max_tokens - 2))
    logits = rng.normals(voxels * tokens).astype(np.float32).reshape(voxels, tokens)
    maps = AttentionMaps(logits, (voxels, 1, 1, tokens))
    mask = EditMask((rng.uniforms(voxels) < 0.5).astype(np.uint8).reshape(voxels, 1, 1))
    n_tar = 1 + int(rng.uniforms(1)[0] * (tokens - 1) * 0.49)
    order = np.argsort(rng.uniforms(tokens))
    j_tar = TargetTokenSet(frozenset(int(i) for i in order[:n_tar]))
    return maps, mask, j_tar


def check_sar_range_preservation() -> tuple[bool, str]:
    """10,000 random cases: step 1 stays in row extrema, step 2 in column
    extrema, up to 4 ulp."""
    rng = RngStream(101)
    worst = 0.0
    for _ in range(10_000):
        maps, mask, j_tar = _random_sar_case(rng)
        b1, b2 = (float(v) for v in rng.uniforms(2))
        step1 = text_token_modulation(maps, mask, j_tar, b1)
        lo = maps.logits.min(axis=1, keepdims=True)
        hi = maps.logits.max(axis=1, keepdims=True)
        slack = 4 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)))
        if ((step1.logits < lo - slack) | (step1.logits > hi + slack)).any():
            return False, "step 1 left the row extrema"
        worst = max(
            worst,
            float((lo - step1.logits).max()),
            float((step1.logits - hi).max()),
        )
        step2 = spatiotemporal_modulation(step1, mask, j_tar, b2)
        for j in sorted(j_tar.indices):
            col = step1.logits[:, j]
            cs = 4 * np.spacing(np.maximum(np.abs(col.min()), np.abs(col.max())))
            if (step2.logits[:, j] < col.min() - cs).any() or (
                step2.logits[:, j] > col.max() + cs
            ).any():
                return False, "step 2 left the column extrema"
    return True, f"10000 cases, worst excess {worst:.2e}"


def check_sar_endpoints() -> tuple[bool, str]:
    """1,000 random maps: beta 0 is a bitwise identity, beta 1 assigns extrema."""
    rng = RngStream(202)
    for _ in range(1_000):
        maps, mask, j_tar = _random_sar_case(rng)
        ident = text_token_modulation(maps, mask, j_tar, 0.0)
        if ident.logits.tobytes() != maps.logits.tobytes():
            return False, "beta1=0 changed the logits"
        ident2 = spatiotemporal_modulation(maps, mask, j_tar, 0.0)
        if ident2.logits.tobytes() != maps.logits.tobytes():
            return False, "beta2=0 changed the logits"
        rows = mask.flat()
        tar = j_tar.column_selector(maps.tokens)
        pinned = text_token_modulation(maps, mask, j_tar, 1.0)
        expect = np.where(
            tar[None, :],
            maps.logits.max(axis=1, keepdims=True),
            maps.logits.min(axis=1, keepdims=True),
        )
        if rows.any() and not np.array_equal(pinned.logits[rows], expect[rows]):
            return False, "beta1=1 missed the row extrema"
        pinned2 = spatiotemporal_modulation(maps, mask, j_tar, 1.0)
        for j in sorted(j_tar.indices):
            col = maps.logits[:, j]
            want = np.where(rows, col.max(), col.min())
            if not np.array_equal(pinned2.logits[:, j], want):
                return False, "beta2=1 missed the column extrema"
    return True, "1000 maps, both endpoints exact"


def check_amm_bounds() -> tuple[bool, str]:
    """10,000 random signals: multiplier in [1, 1+gain], sign kept,
    magnitude never shrinks, contrast in [0, 1]."""
    rng = RngStream(303)
    for _ in range(10_000):
        b = 1 + int(rng.uniforms(1)[0] * 2)
        frames = 1 + int(rng.uniforms(1)[0] * 6)
        dims = (b, 2, frames, 2, 2)
        dv = VideoLatent(
            (rng.normals(int(np.prod(dims))) * 3.0).astype(np.float32).reshape(dims)
        )
        gamma = float(rng.uniforms(1)[0] * 2.5)
        cfg = AmmConfig(gamma=gamma, f0=21)
        gain = gamma_f(cfg, frames)
        cm = contrast_map(dv, cfg.epsilon)
        if cm.data.min() < 0.0 or cm.data.max() > 1.0:
            return False, "contrast left [0, 1]"
        factor = 1.0 + np.float32(gain) * cm.data
        if (factor < 1.0).any() or (factor > 1.0 + np.float32(gain)).any():
            return False, "multiplier left [1, 1+gain]"
        out = apply_amm(dv, cfg, frames)
        if (np.sign(out.data) * np.sign(dv.data) < 0).any():
            return False, "sign flipped"
        if (np.abs(out.data) < np.abs(dv.data)).any():
            return False, "magnitude shrank"
    return True, "10000 signals within bounds"


def check_gain_anchors() -> tuple[bool, str]:
    """gamma_f(1) = 0 and gamma_f(F0) = gamma exactly; monotone to F=200."""
    for gamma, f0 in ((1.0, 21), (0.37, 8), (2.5, 100)):
        cfg = AmmConfig(gamma=gamma, f0=f0)
        if gamma_f(cfg, 1) != 0.0:
            return False, f"gamma_f(1) != 0 for f0={f0}"
        if gamma_f(cfg, f0) != gamma:
            return False, f"gamma_f(F0) != gamma for f0={f0}"
        values = [gamma_f(cfg, f) for f in range(1, 201)]
        if not all(b > a for a, b in zip(values, values[1:])):
            return False, "gain not strictly increasing"
    return True, "anchors exact, monotone over 1..200"


def _null_edit_cases():
    """(label, registry, sar_config, j_tar) pairs for the fixed-point check."""
    gauss = BackendRegistry()
    gauss.register("cond", GaussianCondition(np.array([0.3, -0.8], dtype=np.float32), 1.1))
    yield "gaussian", gauss, SarConfig(beta1=0.3, beta2=0.3), TargetTokenSet.of(0)
    toy = BackendRegistry()
    j_tar = TargetTokenSet.of(1)
    src, _ = make_toy_condition_pair(99, tokens=4, query_dim=3, channels=2, j_tar=j_tar)
    toy.register("cond", src)
    yield "toy_attention", toy, SarConfig(beta1=0.0, beta2=0.0), j_tar


def _null_edit_runs(record_states: bool):
    rng = RngStream(404)
    dims = (1, 2, 3, 4, 4)
    mask_bits = np.zeros(dims[2:], dtype=np.uint8)
    mask_bits[:, 1:3, 1:3] = 1
    for label, registry, sar_cfg, j_tar in _null_edit_cases():
        cfg = EditConfig(
            grid=TimeGrid.uniform(25, skip=2),
            sar=sar_cfg,
            amm=AmmConfig(gamma=1.0),
            source_condition="cond",
            target_condition="cond",
            mask=EditMask(mask_bits),
            j_tar=j_tar,
            seed=7,
            record_states=record_states,
        )
        for k in range(50):
            x = VideoLatent(
                rng.normals(int(np.prod(dims))).astype(np.float32).reshape(dims)
            )
            result, report = run_edit(x, replace(cfg, seed=7 + k), registry)
            yield label, x, result, report


def check_null_edit_fixed_point() -> tuple[bool, str]:
    """100 random inputs, both backends, refinement and amplification on:
    the output is bitwise the source."""
    count = 0
    for label, x, result, _ in _null_edit_runs(record_states=False):
        if result.data.tobytes() != x.data.tobytes():
            return False, f"{label}: output deviated from the source"
        count += 1
    return True, f"{count} runs bitwise fixed"


def check_coupling_identity() -> tuple[bool, str]:
    """z_tar - z_edit == z_src - x_src, bitwise, at every step of the
    null-edit runs."""
    steps = 0
    for label, x, _, report in _null_edit_runs(record_states=True):
        for rec in report.steps:
            lhs = rec.z_tar - rec.z_edit_before
            rhs = rec.z_src - x.data
            if not np.array_equal(lhs, rhs):
                return False, f"{label}: coupling identity broke at step {rec.index}"
            steps += 1
    return True, f"{steps} steps exact"


def _mc_velocity_estimate(gen, mu, s, t, z, samples=100_000):
    """Kernel-weighted local-linear regression of (noise - data) on the
    path state around z; independent of the closed form."""
    data = mu + s * gen.standard_normal(samples)
    noise = gen.standard_normal(samples)
    state = (1.0 - t) * data + t * noise
    target = noise - data
    sigma_z = np.sqrt((1.0 - t) ** 2 * s * s + t * t)
    h = 0.5 * sigma_z
    w = np.exp(-0.5 * ((state - z) / h) ** 2)
    x = state - z
    sw, swx, swxx = w.sum(), (w * x).sum(), (w * x * x).sum()
    swy, swxy = (w * target).sum(), (w * x * target).sum()
    det = sw * swxx - swx * swx
    return (swxx * swy - swx * swxy) / det


def check_gaussian_velocity_oracle() -> tuple[bool, str]:
    """200 random points agree with the Monte-Carlo estimate within 2%."""
    gen = np.random.default_rng(515)
    checked = 0
    worst = 0.0
    while checked < 200:
        mu = float(gen.uniform(2.5, 5.0) * gen.choice([-1.0, 1.0]))
        s = float(gen.uniform(0.6, 1.6))
        t = float(gen.uniform(0.25, 0.75))
        u = float(gen.uniform(-1.0, 1.0))
        sigma_z = np.sqrt((1.0 - t) ** 2 * s * s + t * t)
        z = (1.0 - t) * mu + u * sigma_z
        # closed form via the shipped implementation
        state = VideoLatent(np.full((1, 1, 1, 1, 1), z, dtype=np.float32))
        from .backends import gaussian_velocity

        closed = gaussian_velocity(state, t, GaussianCondition(np.float32(mu), s)).data.item()
        if abs(closed) < 2.0:
            continue  # relative comparison is ill-conditioned near zero
        estimate = _mc_velocity_estimate(gen, mu, s, t, z)
        rel = abs(estimate - closed) / abs(closed)
        worst = max(worst, rel)
        if rel > 0.02:
            return False, f"point (mu={mu:.3f}, s={s:.3f}, t={t:.3f}, z={z:.3f}): {rel:.4f}"
        checked += 1
    return True, f"200 points, worst relative error {worst:.4f}"


def check_generation_sanity() -> tuple[bool, str]:
    """1,000 Euler trajectories from pure noise land on the data statistics."""
    mu = np.array([0.6, -1.1], dtype=np.float32)
    s = 0.8
    registry = BackendRegistry()
    registry.register("gen", GaussianCondition(mu, s))
    z = RngStream(606).normals(1000 * 2 * 4).astype(np.float32).reshape(1000, 2, 1, 2, 2)
    times = np.linspace(1.0, 0.0, 1001)
    for k in range(1000):
        v = registry.velocity(VelocityQuery(VideoLatent(z), float(times[k]), "gen"))
        z = z + np.float32(times[k + 1] - times[k]) * v.data
    errs = [abs(float(z[:, c].mean()) - float(mu[c])) for c in range(2)]
    if max(errs) >= 0.1 * s:
        return False, f"channel means off by {errs}"
    return True, f"channel mean errors {errs[0]:.4f}, {errs[1]:.4f} < {0.1 * s}"


def check_mean_shift_edit() -> tuple[bool, str]:
    """Fine-grid mean-shift edit: uniform displacement along the shift,
    matching an independent scalar integration of the coupled dynamics."""
    delta = np.array([0.8, -0.5], dtype=np.float32)
    registry = BackendRegistry()
    registry.register("src", GaussianCondition(np.zeros(2, dtype=np.float32), 1.0))
    registry.register("tar", GaussianCondition(delta, 1.0))
    dims = (1, 2, 3, 4, 4)
    grid = TimeGrid.uniform(500, skip=2)
    cfg = EditConfig(
        grid=grid,
        sar=SarConfig(beta1=0.0, beta2=0.0),
        amm=AmmConfig(gamma=0.0),
        source_condition="src",
        target_condition="tar",
        mask=EditMask(np.ones(dims[2:], dtype=np.uint8)),
        j_tar=TargetTokenSet.of(0),
        seed=3,
    )
    x = VideoLatent(RngStream(42).normals(int(np.prod(dims))).astype(np.float32).reshape(dims))
    result, _ = run_edit(x, cfg, registry)
    move = (result.data - x.data).astype(np.float64)
    ratio = move / delta.reshape(1, 2, 1, 1, 1).astype(np.float64)
    spread = float((ratio.max() - ratio.min()) / abs(ratio.mean()))
    if spread >= 1e-3:
        return False, f"relative spread {spread:.2e}"
    flat_move = move.reshape(-1)
    flat_delta = np.broadcast_to(delta.reshape(1, 2, 1, 1, 1), dims).reshape(-1).astype(np.float64)
    cosine = float(
        flat_move @ flat_delta / (np.linalg.norm(flat_move) * np.linalg.norm(flat_delta))
    )
    if cosine <= 0.999:
        return False, f"cosine {cosine:.6f}"

    # scalar oracle: per-unit-shift coupled dynamics, straight from the
    # conditional-expectation formulas (s = 1, equal scales)
    def scalar_velocity(z, t, mu):
        denom = (1.0 - t) ** 2 + t * t
        return (2.0 * t - 1.0) * (z - (1.0 - t) * mu) / denom - mu

    c = 0.0
    values = grid.values
    for k in range(grid.skip, grid.steps):
        t, t_next = values[k], values[k + 1]
        dv = scalar_velocity(c, t, 1.0) - scalar_velocity(0.0, t, 0.0)
        c += (t_next - t) * dv
    diff = abs(float(ratio.mean()) - c)
    if diff >= 1e-3:
        return False, f"engine {ratio.mean():.6f} vs oracle {c:.6f}"
    return True, f"spread {spread:.1e}, cosine {cosine:.6f}, oracle diff {diff:.1e}"


def check_blend_locality() -> tuple[bool, str]:
    """100 random masked runs: outside the mask the result is the source."""
    registry = BackendRegistry()
    registry.register("src", GaussianCondition(np.float32(0.0), 1.0))
    registry.register("tar", GaussianCondition(np.float32(1.5), 1.0))
    rng = RngStream(707)
    dims = (1, 2, 3, 4, 4)
    for k in range(100):
        bits = np.zeros(dims[2:], dtype=np.uint8)
        f0 = int(rng.uniforms(1)[0] * 2)
        h0 = int(rng.uniforms(1)[0] * 3)
        w0 = int(rng.uniforms(1)[0] * 3)
        bits[f0 : f0 + 1, h0 : h0 + 2, w0 : w0 + 2] = 1
        cfg = EditConfig(
            grid=TimeGrid.uniform(8, skip=1),
            sar=SarConfig(),
            amm=AmmConfig(),
            source_condition="src",
            target_condition="tar",
            mask=EditMask(bits),
            j_tar=TargetTokenSet.of(0),
            seed=k,
            baseline_blend=True,
        )
        x = VideoLatent(rng.normals(int(np.prod(dims))).astype(np.float32).reshape(dims))
        result, _ = run_edit(x, cfg, registry)
        outside = ~bits.astype(bool)
        if not np.array_equal(result.data[:, :, outside], x.data[:, :, outside]):
            return False, f"case {k}: background changed"
    return True, "100 cases background-exact"


def check_metric_oracles() -> tuple[bool, str]:
    """Hand-verifiable metric identities at their stated tolerances."""
    shape = (3, 4, 4)
    mask = EditMask(
        np.pad(np.ones((1, 2, 2), dtype=np.uint8), ((0, 2), (1, 1), (1, 1)))
    )
    a = np.zeros(shape)
    b = np.full(shape, 0.1)
    psnr = masked_psnr(a, b, mask, peak=1.0)
    if abs(psnr - 20.0) > 1e-3:
        return False, f"uniform-error psnr {psnr}"
    if masked_psnr(a, a.copy(), mask) != 99.0:
        return False, "identical-input psnr not capped"

    video = RngStream(808).normals(3 * 16).reshape(3, 4, 4)
    zero_flow = FlowField(np.zeros((2, 2, 4, 4), dtype=np.float32))
    adjacent = float(np.mean([(video[f] - video[f + 1]) ** 2 for f in range(2)]))
    werr = warp_error(video, zero_flow)
    if abs(werr - adjacent) > 1e-6:
        return False, f"zero-flow warp {werr} vs mse {adjacent}"

    const = np.full((4, 8, 8), 0.25)
    fc = frame_consistency(const, ToyFrameEmbedder())
    if abs(fc - 1.0) > 1e-6:
        return False, f"constant-video consistency {fc}"

    m1 = np.array([1, 1, 0, 0, 0, 0], dtype=np.uint8)
    m2 = np.array([1, 1, 1, 1, 0, 0], dtype=np.uint8)
    zero = np.zeros(6, dtype=np.uint8)
    checks = (
        iou(m1, m1.copy()) == 1.0,
        iou(m1, 1 - m1) == 0.0,
        iou(m1, m2) == 0.5,
        iou(m2, m1) == 0.5,
        iou(zero, zero.copy()) == 1.0,
        iou(zero, m1) == 0.0,
    )
    if not all(checks):
        return False, "iou identity suite failed"
    return True, "psnr/warp/consistency/iou all at tolerance"


_DETERMINISM_CONFIG = """
[backend]
type = gaussian
source_mean = 0.0
target_mean = 0.9

[grid]
steps = 10
skip = 2

[io]
scenario = determinism
source = gaussian:1,2,3,4,4
mask = box:0:3,1:3,1:3
seed = 21
save_contrast_maps = true
"""


def check_artifact_determinism() -> tuple[bool, str]:
    """Two consecutive invocations emit byte-identical artifacts."""
    with tempfile.TemporaryDirectory() as tmp:
        spec = with_out_dir(parse_config_text(_DETERMINISM_CONFIG), tmp)
        status, (first,) = run_batch([spec])
        if status != 0:
            return False, f"first run failed: {first.error}"
        names = ["result.fatn", "report.json", "diagnostics.csv", "source.fatn"]
        names += [p.name for p in sorted(first.out_dir.glob("contrast_step_*.pgm"))]
        snapshot = {name: (first.out_dir / name).read_bytes() for name in names}
        status, (second,) = run_batch([spec])
        if status != 0:
            return False, f"second run failed: {second.error}"
        for name in names:
            if (second.out_dir / name).read_bytes() != snapshot[name]:
                return False, f"{name} changed between invocations"
    return True, f"{len(names)} artifacts byte-stable"


CRITERIA: list[tuple[int, str, Callable[[], tuple[bool, str]]]] = [
    (1, "sar-range-preservation", check_sar_range_preservation),
    (2, "sar-endpoint-identities", check_sar_endpoints),
    (3, "amm-bounds", check_amm_bounds),
    (4, "gain-anchors", check_gain_anchors),
    (5, "null-edit-fixed-point", check_null_edit_fixed_point),
    (6, "coupling-identity", check_coupling_identity),
    (7, "gaussian-velocity-oracle", check_gaussian_velocity_oracle),
    (8, "generation-sanity", check_generation_sanity),
    (9, "mean-shift-edit", check_mean_shift_edit),
    (10, "blend-locality", check_blend_locality),
    (11, "metric-oracles", check_metric_oracles),
    (12, "artifact-determinism", check_artifact_determinism),
]


def run_criteria(numbers: Optional[list[int]] = None) -> list[CriterionResult]:
    results = []
    for number, name, func in CRITERIA:
        if numbers is not None and number not in numbers:
            continue
        start = time.perf_counter()
        try:
            ok, detail = func()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CriterionResult(number, name, ok, detail, time.perf_counter() - start))
    return results
