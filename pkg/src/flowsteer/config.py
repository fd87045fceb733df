"""Run configuration: a flat, sectioned key-value text format.

Grammar: blank lines and ``#`` comment lines are ignored; ``[section]``
lines open one of the six known sections (backend, grid, sar, amm, io,
metrics); every other line is ``key = value``. Unknown sections or keys,
type mismatches, and out-of-range values are rejected with the offending
``section.key`` path. An empty file parses to the full default
configuration.

Defaults: steps 25, skip 2, n_avg 1, beta1 = beta2 = 0.3,
tau_fraction 0.6, gamma 1.0, f0 21, epsilon 1e-7.

``io.source`` is either a FATN latent path or a synthesis recipe
``gaussian:B,C,F,H,W`` drawn from substream 0 of the run seed.
``io.mask`` is ``ones``, ``zeros``, ``box:f0:f1,h0:h1,w0:w1`` (half-open
latent-grid ranges), or a mask file path (.fatn, or .pgm frames separated
by commas). In sweep runs the frame-count slot of either recipe may be the
letter ``F``, substituted per sweep point.
"""

from __future__ import annotations

import io as _io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .amm import AmmConfig
from .backends import BackendRegistry, GaussianCondition, make_toy_condition_pair
from .core import EditMask, RngStream, TimeGrid, VideoLatent, load_mask, load_tensor, sample_gaussian
from .engine import EditConfig
from .errors import ConfigError, TensorFormatError
from .sar import SarConfig, TargetTokenSet

SECTIONS = ("backend", "grid", "sar", "amm", "io", "metrics")

KNOWN_METRICS = ("masked_psnr", "warp_error", "frame_consistency", "local_structure")

SOURCE_CONDITION = "source"
TARGET_CONDITION = "target"


@dataclass(frozen=True)
class BackendSpec:
    type: str = "gaussian"
    source_mean: tuple[float, ...] = (0.0,)
    target_mean: tuple[float, ...] = (0.5,)
    scale: float = 1.0
    tokens: int = 6
    query_dim: int = 4
    temperature: float = 2.0
    model_seed: int = 7
    target_tokens: tuple[int, ...] = (0,)


@dataclass(frozen=True)
class IoSpec:
    scenario: str = "run"
    source: str = "gaussian:1,4,5,8,8"
    mask: str = "ones"
    out_dir: str = "out"
    seed: int = 0
    baseline_blend: bool = False
    save_contrast_maps: bool = False


@dataclass(frozen=True)
class MetricsSpec:
    enable: tuple[str, ...] = ("masked_psnr", "frame_consistency", "local_structure")
    flow: str = ""
    peak: float = 1.0
    embed_grid: int = 8
    edited: str = ""


@dataclass(frozen=True)
class RunSpec:
    backend: BackendSpec = field(default_factory=BackendSpec)
    steps: int = 25
    skip: int = 2
    n_avg: int = 1
    sar: SarConfig = field(default_factory=SarConfig)
    amm: AmmConfig = field(default_factory=AmmConfig)
    io: IoSpec = field(default_factory=IoSpec)
    metrics: MetricsSpec = field(default_factory=MetricsSpec)

    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.steps, self.skip)


def _parse_lines(text: str, origin: str) -> dict[str, dict[str, str]]:
    table: dict[str, dict[str, str]] = {name: {} for name in SECTIONS}
    section: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in table:
                raise ConfigError(name, f"unknown section at {origin}:{lineno}")
            section = name
            continue
        if "=" not in line:
            raise ConfigError(section or "?", f"expected 'key = value' at {origin}:{lineno}")
        if section is None:
            raise ConfigError("?", f"key before any [section] at {origin}:{lineno}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in table[section]:
            raise ConfigError(f"{section}.{key}", "duplicate key")
        table[section][key] = value
    return table


def _take(section: dict[str, str], used: set[str], key: str) -> Optional[str]:
    used.add(key)
    return section.get(key)


def _as_float(path: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(path, f"expected a number, got {raw!r}") from None


def _as_int(path: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(path, f"expected an integer, got {raw!r}") from None


def _as_bool(path: str, raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(path, f"expected true/false, got {raw!r}")


def _as_float_list(path: str, raw: str) -> tuple[float, ...]:
    return tuple(_as_float(path, tok.strip()) for tok in raw.split(",") if tok.strip())


def _as_int_list(path: str, raw: str) -> tuple[int, ...]:
    return tuple(_as_int(path, tok.strip()) for tok in raw.split(",") if tok.strip())


def _check_unknown(section_name: str, section: dict[str, str], used: set[str]) -> None:
    for key in section:
        if key not in used:
            raise ConfigError(f"{section_name}.{key}", "unknown key")


def parse_config_text(text: str, origin: str = "<config>") -> RunSpec:
    table = _parse_lines(text, origin)

    used: set[str] = set()
    sec = table["backend"]
    backend_type = _take(sec, used, "type") or "gaussian"
    if backend_type not in ("gaussian", "toy_attention"):
        raise ConfigError("backend.type", f"unknown backend {backend_type!r}")
    defaults = BackendSpec()
    backend = BackendSpec(
        type=backend_type,
        source_mean=(
            _as_float_list("backend.source_mean", raw)
            if (raw := _take(sec, used, "source_mean")) is not None
            else defaults.source_mean
        ),
        target_mean=(
            _as_float_list("backend.target_mean", raw)
            if (raw := _take(sec, used, "target_mean")) is not None
            else defaults.target_mean
        ),
        scale=(
            _as_float("backend.scale", raw)
            if (raw := _take(sec, used, "scale")) is not None
            else defaults.scale
        ),
        tokens=(
            _as_int("backend.tokens", raw)
            if (raw := _take(sec, used, "tokens")) is not None
            else defaults.tokens
        ),
        query_dim=(
            _as_int("backend.query_dim", raw)
            if (raw := _take(sec, used, "query_dim")) is not None
            else defaults.query_dim
        ),
        temperature=(
            _as_float("backend.temperature", raw)
            if (raw := _take(sec, used, "temperature")) is not None
            else defaults.temperature
        ),
        model_seed=(
            _as_int("backend.model_seed", raw)
            if (raw := _take(sec, used, "model_seed")) is not None
            else defaults.model_seed
        ),
        target_tokens=(
            _as_int_list("backend.target_tokens", raw)
            if (raw := _take(sec, used, "target_tokens")) is not None
            else defaults.target_tokens
        ),
    )
    if backend.scale <= 0:
        raise ConfigError("backend.scale", f"must be > 0, got {backend.scale}")
    if backend.tokens < 1:
        raise ConfigError("backend.tokens", f"must be >= 1, got {backend.tokens}")
    if backend.query_dim < 1:
        raise ConfigError("backend.query_dim", f"must be >= 1, got {backend.query_dim}")
    if backend.temperature <= 0:
        raise ConfigError("backend.temperature", f"must be > 0, got {backend.temperature}")
    if not backend.target_tokens:
        raise ConfigError("backend.target_tokens", "must name at least one token")
    if any(i < 0 or i >= backend.tokens for i in backend.target_tokens):
        raise ConfigError(
            "backend.target_tokens",
            f"indices must lie in [0, {backend.tokens}), got {backend.target_tokens}",
        )
    _check_unknown("backend", sec, used)

    used = set()
    sec = table["grid"]
    steps = _as_int("grid.steps", raw) if (raw := _take(sec, used, "steps")) is not None else 25
    skip = _as_int("grid.skip", raw) if (raw := _take(sec, used, "skip")) is not None else 2
    n_avg = _as_int("grid.n_avg", raw) if (raw := _take(sec, used, "n_avg")) is not None else 1
    if steps < 1:
        raise ConfigError("grid.steps", f"must be >= 1, got {steps}")
    if not 0 <= skip < steps:
        raise ConfigError("grid.skip", f"must satisfy 0 <= skip < steps, got {skip}")
    if n_avg < 1:
        raise ConfigError("grid.n_avg", f"must be >= 1, got {n_avg}")
    _check_unknown("grid", sec, used)

    used = set()
    sec = table["sar"]
    beta1 = _as_float("sar.beta1", raw) if (raw := _take(sec, used, "beta1")) is not None else 0.3
    beta2 = _as_float("sar.beta2", raw) if (raw := _take(sec, used, "beta2")) is not None else 0.3
    tau = (
        _as_float("sar.tau_fraction", raw)
        if (raw := _take(sec, used, "tau_fraction")) is not None
        else 0.6
    )
    layers_raw = _take(sec, used, "layers")
    if layers_raw is None or layers_raw.strip().lower() == "all":
        layer_set = None
    else:
        layer_set = frozenset(_as_int_list("sar.layers", layers_raw))
    if not 0.0 <= beta1 <= 1.0:
        raise ConfigError("sar.beta1", f"must be in [0, 1], got {beta1}")
    if not 0.0 <= beta2 <= 1.0:
        raise ConfigError("sar.beta2", f"must be in [0, 1], got {beta2}")
    if not 0.0 < tau <= 1.0:
        raise ConfigError("sar.tau_fraction", f"must be in (0, 1], got {tau}")
    sar = SarConfig(beta1=beta1, beta2=beta2, tau_fraction=tau, layer_set=layer_set)
    _check_unknown("sar", sec, used)

    used = set()
    sec = table["amm"]
    gamma = _as_float("amm.gamma", raw) if (raw := _take(sec, used, "gamma")) is not None else 1.0
    f0 = _as_int("amm.f0", raw) if (raw := _take(sec, used, "f0")) is not None else 21
    epsilon = (
        _as_float("amm.epsilon", raw) if (raw := _take(sec, used, "epsilon")) is not None else 1e-7
    )
    if gamma < 0:
        raise ConfigError("amm.gamma", f"must be >= 0, got {gamma}")
    if f0 < 2:
        raise ConfigError("amm.f0", f"must be >= 2, got {f0}")
    if epsilon <= 0:
        raise ConfigError("amm.epsilon", f"must be > 0, got {epsilon}")
    amm = AmmConfig(gamma=gamma, f0=f0, epsilon=epsilon)
    _check_unknown("amm", sec, used)

    used = set()
    sec = table["io"]
    io_defaults = IoSpec()
    io_spec = IoSpec(
        scenario=_take(sec, used, "scenario") or io_defaults.scenario,
        source=_take(sec, used, "source") or io_defaults.source,
        mask=_take(sec, used, "mask") or io_defaults.mask,
        out_dir=_take(sec, used, "out_dir") or io_defaults.out_dir,
        seed=(
            _as_int("io.seed", raw)
            if (raw := _take(sec, used, "seed")) is not None
            else io_defaults.seed
        ),
        baseline_blend=(
            _as_bool("io.baseline_blend", raw)
            if (raw := _take(sec, used, "baseline_blend")) is not None
            else io_defaults.baseline_blend
        ),
        save_contrast_maps=(
            _as_bool("io.save_contrast_maps", raw)
            if (raw := _take(sec, used, "save_contrast_maps")) is not None
            else io_defaults.save_contrast_maps
        ),
    )
    _check_unknown("io", sec, used)

    used = set()
    sec = table["metrics"]
    metrics_defaults = MetricsSpec()
    enable_raw = _take(sec, used, "enable")
    if enable_raw is None:
        enabled = metrics_defaults.enable
    else:
        enabled = tuple(tok.strip() for tok in enable_raw.split(",") if tok.strip())
        for name in enabled:
            if name not in KNOWN_METRICS:
                raise ConfigError("metrics.enable", f"unknown metric {name!r}")
    metrics = MetricsSpec(
        enable=enabled,
        flow=_take(sec, used, "flow") or metrics_defaults.flow,
        peak=(
            _as_float("metrics.peak", raw)
            if (raw := _take(sec, used, "peak")) is not None
            else metrics_defaults.peak
        ),
        embed_grid=(
            _as_int("metrics.embed_grid", raw)
            if (raw := _take(sec, used, "embed_grid")) is not None
            else metrics_defaults.embed_grid
        ),
        edited=_take(sec, used, "edited") or metrics_defaults.edited,
    )
    if metrics.peak <= 0:
        raise ConfigError("metrics.peak", f"must be > 0, got {metrics.peak}")
    if metrics.embed_grid < 1:
        raise ConfigError("metrics.embed_grid", f"must be >= 1, got {metrics.embed_grid}")
    _check_unknown("metrics", sec, used)

    return RunSpec(
        backend=backend,
        steps=steps,
        skip=skip,
        n_avg=n_avg,
        sar=sar,
        amm=amm,
        io=io_spec,
        metrics=metrics,
    )


def parse_config(path: str | Path) -> RunSpec:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), origin=str(path))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def emit_config(spec: RunSpec) -> str:
    """Canonical text form; parse(emit(parse(x))) == parse(x)."""
    out = _io.StringIO()
    b = spec.backend
    out.write("[backend]\n")
    out.write(f"type = {b.type}\n")
    out.write(f"source_mean = {_fmt(b.source_mean)}\n")
    out.write(f"target_mean = {_fmt(b.target_mean)}\n")
    out.write(f"scale = {_fmt(b.scale)}\n")
    out.write(f"tokens = {b.tokens}\n")
    out.write(f"query_dim = {b.query_dim}\n")
    out.write(f"temperature = {_fmt(b.temperature)}\n")
    out.write(f"model_seed = {b.model_seed}\n")
    out.write(f"target_tokens = {_fmt(b.target_tokens)}\n")
    out.write("\n[grid]\n")
    out.write(f"steps = {spec.steps}\nskip = {spec.skip}\nn_avg = {spec.n_avg}\n")
    out.write("\n[sar]\n")
    out.write(f"beta1 = {_fmt(spec.sar.beta1)}\n")
    out.write(f"beta2 = {_fmt(spec.sar.beta2)}\n")
    out.write(f"tau_fraction = {_fmt(spec.sar.tau_fraction)}\n")
    layers = "all" if spec.sar.layer_set is None else _fmt(tuple(sorted(spec.sar.layer_set)))
    out.write(f"layers = {layers}\n")
    out.write("\n[amm]\n")
    out.write(f"gamma = {_fmt(spec.amm.gamma)}\n")
    out.write(f"f0 = {spec.amm.f0}\n")
    out.write(f"epsilon = {_fmt(spec.amm.epsilon)}\n")
    out.write("\n[io]\n")
    out.write(f"scenario = {spec.io.scenario}\n")
    out.write(f"source = {spec.io.source}\n")
    out.write(f"mask = {spec.io.mask}\n")
    out.write(f"out_dir = {spec.io.out_dir}\n")
    out.write(f"seed = {spec.io.seed}\n")
    out.write(f"baseline_blend = {_fmt(spec.io.baseline_blend)}\n")
    out.write(f"save_contrast_maps = {_fmt(spec.io.save_contrast_maps)}\n")
    out.write("\n[metrics]\n")
    out.write(f"enable = {_fmt(spec.metrics.enable)}\n")
    if spec.metrics.flow:
        out.write(f"flow = {spec.metrics.flow}\n")
    out.write(f"peak = {_fmt(spec.metrics.peak)}\n")
    out.write(f"embed_grid = {spec.metrics.embed_grid}\n")
    if spec.metrics.edited:
        out.write(f"edited = {spec.metrics.edited}\n")
    return out.getvalue()


def config_echo(spec: RunSpec) -> dict[str, str]:
    """Flat section.key -> value mapping for report embedding."""
    echo: dict[str, str] = {}
    section = ""
    for line in emit_config(spec).splitlines():
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]")
            continue
        key, _, value = line.partition(" = ")
        echo[f"{section}.{key}"] = value
    return echo


# ---------------------------------------------------------------------------
# Materializing a spec into run inputs
# ---------------------------------------------------------------------------


def _substitute_frames(recipe: str, frames: Optional[int]) -> str:
    # only synthesis recipes carry the F placeholder; paths are left alone
    if frames is None or not (recipe.startswith("gaussian:") or recipe.startswith("box:")):
        return recipe
    return recipe.replace("F", str(frames))


def resolve_source(spec: RunSpec, frames: Optional[int] = None) -> VideoLatent:
    """Load or synthesize the source latent; substream 0 feeds synthesis."""
    recipe = _substitute_frames(spec.io.source, frames)
    if recipe.startswith("gaussian:"):
        dims = _as_int_list("io.source", recipe.removeprefix("gaussian:"))
        if len(dims) != 5 or any(d < 1 for d in dims):
            raise ConfigError("io.source", f"recipe needs 5 positive dims, got {recipe!r}")
        return sample_gaussian(RngStream(spec.io.seed).substream(0), dims)
    path = Path(recipe)
    if not path.exists():
        raise ConfigError("io.source", f"file not found: {recipe}")
    return load_tensor(path)


def resolve_mask(spec: RunSpec, latent: VideoLatent, frames: Optional[int] = None) -> EditMask:
    recipe = _substitute_frames(spec.io.mask, frames)
    grid_shape = (latent.dims.frames, latent.dims.height, latent.dims.width)
    if recipe == "ones":
        return EditMask(np.ones(grid_shape, dtype=np.uint8))
    if recipe == "zeros":
        return EditMask(np.zeros(grid_shape, dtype=np.uint8))
    if recipe.startswith("box:"):
        spans = recipe.removeprefix("box:").split(",")
        if len(spans) != 3:
            raise ConfigError("io.mask", f"box needs three ranges, got {recipe!r}")
        bits = np.zeros(grid_shape, dtype=np.uint8)
        slices = []
        for axis, span in enumerate(spans):
            lo_raw, _, hi_raw = span.partition(":")
            lo = _as_int("io.mask", lo_raw)
            hi = _as_int("io.mask", hi_raw)
            if not 0 <= lo < hi <= grid_shape[axis]:
                raise ConfigError(
                    "io.mask", f"range {span!r} out of bounds for axis size {grid_shape[axis]}"
                )
            slices.append(slice(lo, hi))
        bits[tuple(slices)] = 1
        return EditMask(bits)
    paths = [Path(tok.strip()) for tok in recipe.split(",") if tok.strip()]
    for p in paths:
        if not p.exists():
            raise ConfigError("io.mask", f"file not found: {p}")
    try:
        if len(paths) == 1:
            return load_mask(paths[0], grid_shape)
        return load_mask(paths, grid_shape)
    except TensorFormatError as exc:
        raise ConfigError("io.mask", str(exc)) from exc


def build_backend(spec: RunSpec, latent: VideoLatent) -> BackendRegistry:
    """Register the source/target condition pair the spec describes."""
    registry = BackendRegistry()
    b = spec.backend
    if b.type == "gaussian":
        registry.register(
            SOURCE_CONDITION,
            GaussianCondition(np.asarray(b.source_mean, dtype=np.float32), b.scale),
        )
        registry.register(
            TARGET_CONDITION,
            GaussianCondition(np.asarray(b.target_mean, dtype=np.float32), b.scale),
        )
    else:
        src, tar = make_toy_condition_pair(
            b.model_seed,
            b.tokens,
            b.query_dim,
            latent.dims.channels,
            TargetTokenSet(frozenset(b.target_tokens)),
            b.temperature,
        )
        registry.register(SOURCE_CONDITION, src)
        registry.register(TARGET_CONDITION, tar)
    return registry


def build_edit_config(spec: RunSpec, mask: EditMask) -> EditConfig:
    return EditConfig(
        grid=spec.grid(),
        sar=spec.sar,
        amm=spec.amm,
        source_condition=SOURCE_CONDITION,
        target_condition=TARGET_CONDITION,
        mask=mask,
        j_tar=TargetTokenSet(frozenset(spec.backend.target_tokens)),
        seed=spec.io.seed,
        n_avg=spec.n_avg,
        baseline_blend=spec.io.baseline_blend,
        record_contrast=spec.io.save_contrast_maps,
    )


def with_seed(spec: RunSpec, seed: int) -> RunSpec:
    return replace(spec, io=replace(spec.io, seed=seed))


def with_out_dir(spec: RunSpec, out_dir: str) -> RunSpec:
    return replace(spec, io=replace(spec.io, out_dir=out_dir))
