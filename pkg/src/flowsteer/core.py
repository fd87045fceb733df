"""Dense latent tensors, masks, time grids, deterministic RNG, and file I/O.

Conventions fixed here and relied on by every other module:

* Video latents are ``float32`` arrays of shape ``(B, C, F, H, W)`` stored in
  C order (W fastest, then H, F, C, B). All entries must be finite.

* Tensor files ("FATN") carry an ASCII header line
  ``FATN <ndim> <d1> ... <dn>\\n`` followed by a little-endian float32
  payload of ``prod(dims)`` values in C order. Round-trips are bit-exact.

* Masks come in as 8-bit grayscale PGM (P5), one file per frame, or as a
  single FATN tensor of dims ``(F, H, W)``. Values are binarized (``> 127``
  for 8-bit, ``> 0.5`` for float inputs) and resampled to the latent grid
  with an any-coverage rule: a latent cell is 1 if any source cell whose
  extent intersects it is 1. The rule dilates rather than erodes, so thin
  scribbles survive downsampling, and it is the identity at matched
  resolution.

* Random draws use a counter-based generator so that a ``(seed, counter)``
  pair fully determines every value, independent of draw batching or
  platform. Draw ``k`` of stream ``seed`` is

      ``mix64((seed + (k + 1) * GAMMA) mod 2**64)``

  with ``GAMMA = 0x9E3779B97F4A7C15`` and ``mix64`` the finalizer
  ``x ^= x>>30; x *= 0xBF58476D1CE4E5B9; x ^= x>>27;
  x *= 0x94D049BB133111EB; x ^= x>>31`` (all mod 2**64).
  Uniforms map the top 53 bits to [0, 1); standard normals use the
  Box-Muller transform on consecutive uniform pairs, where the first
  uniform of a pair is shifted into (0, 1] so the logarithm is finite.
  Generating ``n`` normals consumes exactly ``2 * ceil(n / 2)`` counter
  positions. Substream ``i`` of a stream reseeds with
  ``mix64(mix64(seed ^ SPLIT_SALT) + (i + 1) * GAMMA)``,
  ``SPLIT_SALT = 0xD6E8FEB86659FD93``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ShapeMismatchError, TensorFormatError

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX_MUL_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_MUL_2 = np.uint64(0x94D049BB133111EB)
_SPLIT_SALT = np.uint64(0xD6E8FEB86659FD93)
_U53_SCALE = float(2.0**-53)

# Times this far outside [0, 1] are treated as grid-construction noise.
TIME_CLAMP_SLACK = 1e-12

# Dimensions in tensor file headers must keep the payload addressable.
MAX_ELEMENTS = 2**31


class LatentDims(NamedTuple):
    batch: int
    channels: int
    frames: int
    height: int
    width: int


@dataclass(frozen=True)
class VideoLatent:
    """Dense real tensor of shape (B, C, F, H, W); finite, float32, read-only."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 5:
            raise ShapeMismatchError(f"latent must be 5-dimensional, got shape {arr.shape}")
        if any(d < 1 for d in arr.shape):
            raise ShapeMismatchError(f"all latent dims must be >= 1, got {arr.shape}")
        if arr.dtype != np.float32 or not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr, dtype=np.float32)
        if not np.isfinite(arr).all():
            raise ValueError("latent entries must be finite")
        arr = arr.view()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> LatentDims:
        return LatentDims(*self.data.shape)


@dataclass(frozen=True)
class EditMask:
    """Binary (0/1) tensor of shape (F, H, W) marking the intended edit region."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeMismatchError(f"mask must have dims (F, H, W), got shape {arr.shape}")
        if any(d < 1 for d in arr.shape):
            raise ShapeMismatchError(f"all mask dims must be >= 1, got {arr.shape}")
        if arr.dtype != np.uint8:
            out = np.zeros(arr.shape, dtype=np.uint8)
            bad = ~((arr == 0) | (arr == 1))
            if bad.any():
                raise ValueError("mask entries must be 0 or 1")
            out[arr == 1] = 1
            arr = out
        elif ((arr != 0) & (arr != 1)).any():
            raise ValueError("mask entries must be 0 or 1")
        arr = np.ascontiguousarray(arr)
        arr = arr.view()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def flat(self) -> np.ndarray:
        """Voxel-order (F slow, W fast) boolean view, length F*H*W."""
        return self.data.reshape(-1).astype(bool)

    def is_empty(self) -> bool:
        return not self.data.any()


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing times t_T > ... > t_0 with an initial-step skip count.

    ``values[0]`` is the start time (at most 1), ``values[-1]`` the end time
    (at least 0). ``steps`` counts intervals; the first ``skip`` of them
    contribute no state update.
    """

    values: tuple[float, ...]
    skip: int = 0

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 2:
            raise ValueError("a time grid needs at least two points")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("grid times must be strictly decreasing")
        if vals[0] > 1.0 + TIME_CLAMP_SLACK or vals[-1] < -TIME_CLAMP_SLACK:
            raise ValueError(f"grid times must lie in [0, 1], got [{vals[-1]}, {vals[0]}]")
        if not 0 <= self.skip < len(vals) - 1:
            raise ValueError(f"skip must satisfy 0 <= skip < steps, got {self.skip}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, steps: int, skip: int = 0) -> "TimeGrid":
        """t_i = i / steps for i = steps .. 0."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        return cls(tuple(i / steps for i in range(steps, -1, -1)), skip=skip)

    @property
    def steps(self) -> int:
        return len(self.values) - 1

    @property
    def t_max(self) -> float:
        return self.values[0]

    @property
    def active_steps(self) -> int:
        return self.steps - self.skip

    def intervals(self) -> Iterable[tuple[int, float, float]]:
        """Yield (step_index, t_cur, t_next) for active steps only.

        step_index counts down from ``steps - skip`` to 1, matching the
        convention that step i moves the state from t_i to t_{i-1}.
        """
        for k in range(self.skip, self.steps):
            yield self.steps - k, self.values[k], self.values[k + 1]


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=True)
    x ^= x >> np.uint64(30)
    x *= _MIX_MUL_1
    x ^= x >> np.uint64(27)
    x *= _MIX_MUL_2
    x ^= x >> np.uint64(31)
    return x


@dataclass
class RngStream:
    """Counter-based deterministic random stream (see module docstring).

    The only mutable state is ``counter``; all draws are pure functions of
    (seed, counter position), so distinct streams are safe to use from
    distinct threads.
    """

    seed: int
    counter: int = 0

    def __post_init__(self):
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = (np.uint64(self.seed) + (idx + np.uint64(1)) * _GAMMA).astype(np.uint64)
            out = _mix64(states)
        self.counter += n
        return out

    def uniforms(self, n: int) -> np.ndarray:
        """n float64 values in [0, 1)."""
        return np.asarray(self._raw(n) >> np.uint64(11), dtype=np.float64) * _U53_SCALE

    def normals(self, n: int) -> np.ndarray:
        """n float64 standard normals via Box-Muller; consumes 2*ceil(n/2) draws."""
        pairs = (n + 1) // 2
        bits = self._raw(2 * pairs)
        u1 = (np.asarray(bits[0::2] >> np.uint64(11), dtype=np.float64) + 1.0) * _U53_SCALE
        u2 = np.asarray(bits[1::2] >> np.uint64(11), dtype=np.float64) * _U53_SCALE
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = (2.0 * math.pi) * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def substream(self, index: int) -> "RngStream":
        """Independent child stream; deterministic in (seed, index)."""
        if index < 0:
            raise ValueError("substream index must be >= 0")
        with np.errstate(over="ignore"):
            base = _mix64(np.array([self.seed ^ int(_SPLIT_SALT)], dtype=np.uint64))
            child = _mix64((base + (np.uint64(index) + np.uint64(1)) * _GAMMA).astype(np.uint64))
        return RngStream(int(child[0]))


def sample_gaussian(rng: RngStream, dims: Sequence[int]) -> VideoLatent:
    """Draw an i.i.d. standard-normal latent of the given (B, C, F, H, W) dims."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 5 or any(d < 1 for d in dims):
        raise ShapeMismatchError(f"dims must be 5 positive integers, got {dims}")
    n = int(np.prod(dims))
    return VideoLatent(rng.normals(n).astype(np.float32).reshape(dims))


def clamp_time(t: float) -> float:
    """Snap grid-construction noise just outside [0, 1]; reject real violations."""
    if -TIME_CLAMP_SLACK <= t < 0.0:
        return 0.0
    if 1.0 < t <= 1.0 + TIME_CLAMP_SLACK:
        return 1.0
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time {t!r} outside [0, 1]")
    return float(t)


def interpolate_source(x_src: VideoLatent, noise: VideoLatent, t: float) -> VideoLatent:
    """(1 - t) * x_src + t * noise, elementwise; exact at both endpoints."""
    if x_src.data.shape != noise.data.shape:
        raise ShapeMismatchError(
            f"source shape {x_src.data.shape} != noise shape {noise.data.shape}"
        )
    t = clamp_time(t)
    if t == 0.0:
        return VideoLatent(x_src.data.copy())
    if t == 1.0:
        return VideoLatent(noise.data.copy())
    return VideoLatent((1.0 - t) * x_src.data + t * noise.data)


# ---------------------------------------------------------------------------
# FATN tensor files
# ---------------------------------------------------------------------------

_FATN_MAGIC = b"FATN"
_MAX_HEADER_BYTES = 4096


def write_fatn(path: str | Path, array: np.ndarray) -> None:
    """Write any n-dim float array as a FATN file (float32 payload, C order)."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    header = "FATN %d %s\n" % (arr.ndim, " ".join(str(d) for d in arr.shape))
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(arr.astype("<f4", copy=False).tobytes(order="C"))


def read_fatn(path: str | Path) -> np.ndarray:
    """Read a FATN file; raises TensorFormatError on any malformation."""
    with open(path, "rb") as fh:
        header = bytearray()
        while True:
            ch = fh.read(1)
            if not ch:
                raise TensorFormatError(f"{path}: truncated header")
            if ch == b"\n":
                break
            header += ch
            if len(header) > _MAX_HEADER_BYTES:
                raise TensorFormatError(f"{path}: header exceeds {_MAX_HEADER_BYTES} bytes")
        fields = bytes(header).split()
        if not fields or fields[0] != _FATN_MAGIC:
            raise TensorFormatError(f"{path}: missing FATN magic")
        try:
            ndim = int(fields[1])
            dims = [int(tok) for tok in fields[2:]]
        except (IndexError, ValueError) as exc:
            raise TensorFormatError(f"{path}: malformed header fields") from exc
        if ndim < 1 or len(dims) != ndim:
            raise TensorFormatError(
                f"{path}: header declares {ndim} dims but provides {len(dims)}"
            )
        if any(d < 1 for d in dims):
            raise TensorFormatError(f"{path}: nonpositive dimension in header")
        count = 1
        for d in dims:
            count *= d
            if count > MAX_ELEMENTS:
                raise TensorFormatError(f"{path}: dim overflow, more than {MAX_ELEMENTS} elements")
        payload = fh.read(4 * count + 1)
        if len(payload) < 4 * count:
            raise TensorFormatError(
                f"{path}: truncated payload, expected {4 * count} bytes, got {len(payload)}"
            )
        if len(payload) > 4 * count:
            raise TensorFormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f4", count=count).reshape(dims).copy()


def save_tensor(latent: VideoLatent, path: str | Path) -> None:
    write_fatn(path, latent.data)


def load_tensor(path: str | Path) -> VideoLatent:
    arr = read_fatn(path)
    if arr.ndim != 5:
        raise TensorFormatError(f"{path}: latent file must have 5 dims, got {arr.ndim}")
    return VideoLatent(arr)


# ---------------------------------------------------------------------------
# PGM (P5) images
# ---------------------------------------------------------------------------


def _read_pgm_token(fh) -> bytes:
    tok = bytearray()
    while True:
        ch = fh.read(1)
        if not ch:
            raise TensorFormatError("truncated PGM header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if tok:
                return bytes(tok)
            continue
        tok += ch


def read_pgm(path: str | Path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) into a (H, W) uint8 array."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P5":
            raise TensorFormatError(f"{path}: unsupported image format (want P5)")
        try:
            width = int(_read_pgm_token(fh))
            height = int(_read_pgm_token(fh))
            maxval = int(_read_pgm_token(fh))
        except ValueError as exc:
            raise TensorFormatError(f"{path}: malformed PGM header") from exc
        if width < 1 or height < 1:
            raise TensorFormatError(f"{path}: zero-size image")
        if not 0 < maxval <= 255:
            raise TensorFormatError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
        payload = fh.read(width * height)
        if len(payload) < width * height:
            raise TensorFormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a (H, W) uint8 array as binary PGM."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ShapeMismatchError(f"PGM image must be 2-d, got shape {img.shape}")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes(order="C"))


# ---------------------------------------------------------------------------
# Mask loading and any-coverage resampling
# ---------------------------------------------------------------------------


def _coverage_blocks(n_src: int, n_dst: int) -> list[tuple[int, int]]:
    """Half-open source index ranges intersecting each destination cell.

    Destination cell i spans [i * n_src / n_dst, (i + 1) * n_src / n_dst) in
    source coordinates; block boundaries use exact integer arithmetic.
    """
    blocks = []
    for i in range(n_dst):
        start = (i * n_src) // n_dst
        end = -((-(i + 1) * n_src) // n_dst)  # ceil division
        blocks.append((start, min(max(end, start + 1), n_src)))
    return blocks


def resample_mask_any(mask: np.ndarray, dst_shape: tuple[int, int, int]) -> np.ndarray:
    """Any-coverage (dilating) resample of a binary (F, H, W) grid."""
    src = np.asarray(mask, dtype=bool)
    if src.ndim != 3:
        raise ShapeMismatchError(f"mask grid must be 3-d, got shape {src.shape}")
    out = src
    for axis, n_dst in enumerate(dst_shape):
        n_src = out.shape[axis]
        if n_src == n_dst:
            continue
        moved = np.moveaxis(out, axis, 0)
        reduced = np.empty((n_dst,) + moved.shape[1:], dtype=bool)
        for i, (a, b) in enumerate(_coverage_blocks(n_src, n_dst)):
            reduced[i] = moved[a:b].any(axis=0)
        out = np.moveaxis(reduced, 0, axis)
    return out.astype(np.uint8)


def load_mask(
    source: str | Path | Sequence[str | Path],
    latent_dims: tuple[int, int, int],
) -> EditMask:
    """Load a mask from per-frame PGM files or one FATN (F, H, W) tensor.

    8-bit pixels binarize at > 127, float grids at > 0.5; the binary grid is
    then resampled to ``latent_dims`` with the any-coverage rule.
    """
    frames, height, width = (int(d) for d in latent_dims)
    if frames < 1 or height < 1 or width < 1:
        raise ShapeMismatchError(f"latent dims must be positive, got {latent_dims}")
    if isinstance(source, (str, Path)):
        path = Path(source)
        if path.suffix.lower() == ".pgm":
            grid = read_pgm(path)[None, :, :] > 127
        else:
            arr = read_fatn(path)
            if arr.ndim != 3:
                raise TensorFormatError(f"{path}: mask tensor must have dims (F, H, W)")
            grid = arr > 0.5
    else:
        paths = list(source)
        if not paths:
            raise TensorFormatError("empty mask frame list")
        planes = [read_pgm(p) for p in paths]
        if any(p.shape != planes[0].shape for p in planes):
            raise ShapeMismatchError("mask frames must share one resolution")
        grid = np.stack(planes, axis=0) > 127
    return EditMask(resample_mask_any(grid, (frames, height, width)))
