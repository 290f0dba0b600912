"""Resizing-and-sliding-crop augmentation.

Scales an image up per axis, then emits a deterministic set of window crops
whose union covers the scaled image. Per-axis window start offsets follow

    offset(i) = (i // 2) * l + (i % 2) * alpha_i,   alpha_i ~ UniformDiscrete(b1, b2)

with even steps forming a coverage grid (spacing l, final offset clamped to
S - W) and odd steps adding jittered in-between starts. The 2-D crop set is
the full Cartesian grid of even offsets plus one crop per odd offset per axis,
paired with a cycling grid offset on the other axis.

Crops are differentiable views: ``apply`` / ``vjp`` route gradients through
the window selection and the bilinear resize.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ScheduleError(Exception):
    pass


@dataclass
class AxisSchedule:
    scaled_size: int  # S
    window: int  # W
    grid_step: int  # l
    beta: tuple[int, int]
    grid_offsets: list[int]  # even-index offsets, ends at S - W
    jitter_offsets: list[int]  # odd-index offsets
    alphas: list[int]  # the alpha draw behind each jitter offset

    @property
    def offsets(self) -> list[int]:
        return sorted(set(self.grid_offsets) | set(self.jitter_offsets))


def axis_schedule(s: int, w: int, l: int, beta1: int, beta2: int,
                  rng: np.random.Generator) -> AxisSchedule:
    if not (1 <= beta1 <= beta2 < l <= w <= s):
        raise ScheduleError(
            f"need 1 <= beta1 <= beta2 < l <= W <= S, got "
            f"beta=({beta1},{beta2}) l={l} W={w} S={s}")
    limit = s - w
    grid, jitter, alphas = [], [], []
    i = 0
    while True:
        base = (i // 2) * l
        if i % 2 == 0:
            if base >= limit:
                break
            grid.append(base)
        else:
            alpha = int(rng.integers(beta1, beta2 + 1))
            off = base + alpha
            if off <= limit:
                jitter.append(off)
                alphas.append(alpha)
        i += 1
    grid.append(limit)  # guarantees the last window ends flush at S
    return AxisSchedule(scaled_size=s, window=w, grid_step=l, beta=(beta1, beta2),
                        grid_offsets=grid, jitter_offsets=jitter, alphas=alphas)


def resize(image: np.ndarray, s_x: float, s_y: float,
           allow_downscale: bool = False) -> np.ndarray:
    """Bilinear scale of a (3, H, W) image to (floor(H*s_y), floor(W*s_x))."""
    if (s_x < 1.0 or s_y < 1.0) and not allow_downscale:
        raise ScheduleError(f"scale factors below 1 need parameter-study mode: "
                            f"({s_x}, {s_y})")
    h, w = image.shape[-2:]
    return kernels.bilinear_resize(image, int(h * s_y), int(w * s_x))


@dataclass
class CropPlan:
    """Frozen geometry for one rescale window of the attack."""

    in_size: int
    s_x: float
    s_y: float
    window: int
    sched_x: AxisSchedule | None
    sched_y: AxisSchedule | None
    offsets: list[tuple[int, int]]  # (x_offset, y_offset) per crop
    scaled_h: int
    scaled_w: int
    pad_to: int | None = None  # parameter-study mode: zero-pad scaled image to W

    @property
    def k(self) -> int:
        return len(self.offsets)

    def apply(self, image: np.ndarray) -> np.ndarray:
        """-> (k, 3, W, W) crop batch."""
        scaled = kernels.bilinear_resize(image, self.scaled_h, self.scaled_w)
        if self.pad_to is not None:
            padded = np.zeros((3, self.pad_to, self.pad_to), dtype=np.float64)
            padded[:, : self.scaled_h, : self.scaled_w] = scaled
            scaled = padded
        w = self.window
        return np.stack([scaled[:, oy : oy + w, ox : ox + w] for ox, oy in self.offsets])

    def vjp(self, d_crops: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
        """Scatter per-crop cotangents back to the original image."""
        size = self.pad_to if self.pad_to is not None else None
        h = size or self.scaled_h
        w_ = size or self.scaled_w
        d_scaled = np.zeros((3, h, w_), dtype=np.float64)
        w = self.window
        for g, (ox, oy) in zip(d_crops, self.offsets):
            d_scaled[:, oy : oy + w, ox : ox + w] += g
        if self.pad_to is not None:
            d_scaled = d_scaled[:, : self.scaled_h, : self.scaled_w]
        return kernels.bilinear_resize_vjp(d_scaled, in_h, in_w)


@dataclass
class CropBatch:
    """Spec-facing crop set: (x_offset, y_offset, crop) triples."""

    crops: list[tuple[int, int, np.ndarray]]
    s_x: float
    s_y: float
    plan: CropPlan = field(repr=False, default=None)

    @property
    def k(self) -> int:
        return len(self.crops)

    def stacked(self) -> np.ndarray:
        return np.stack([c for _, _, c in self.crops])


def build_crop_plan(in_size: int, s_x: float, s_y: float, window: int, grid_step: int,
                    beta: tuple[int, int], k_max: int, rng: np.random.Generator,
                    use_sliding: bool = True, allow_downscale: bool = False) -> CropPlan:
    if (s_x < 1.0 or s_y < 1.0) and not allow_downscale:
        raise ScheduleError(f"scale factors below 1 need parameter-study mode: "
                            f"({s_x}, {s_y})")
    scaled_h = int(in_size * s_y)
    scaled_w = int(in_size * s_x)
    pad_to = window if (scaled_h < window or scaled_w < window) else None
    if pad_to is not None and not allow_downscale:
        raise ScheduleError(f"window {window} exceeds the scaled image "
                            f"({scaled_h}x{scaled_w})")
    eff_h = max(scaled_h, window)
    eff_w = max(scaled_w, window)

    if not use_sliding:
        return CropPlan(in_size, s_x, s_y, window, None, None, [(0, 0)],
                        scaled_h, scaled_w, pad_to)

    sched_x = axis_schedule(eff_w, window, grid_step, beta[0], beta[1], rng)
    sched_y = axis_schedule(eff_h, window, grid_step, beta[0], beta[1], rng)

    grid = [(ox, oy) for oy in sched_y.grid_offsets for ox in sched_x.grid_offsets]
    if k_max < len(grid):
        raise ScheduleError(f"k_max={k_max} smaller than grid crop count {len(grid)}")
    jitter = []
    for j, ox in enumerate(sched_x.jitter_offsets):
        jitter.append((ox, sched_y.grid_offsets[j % len(sched_y.grid_offsets)]))
    for j, oy in enumerate(sched_y.jitter_offsets):
        jitter.append((sched_x.grid_offsets[j % len(sched_x.grid_offsets)], oy))
    room = k_max - len(grid)
    if len(jitter) > room:
        if room == 0:
            jitter = []
        else:
            stride = -(-len(jitter) // room)  # ceil division
            jitter = jitter[::stride][:room]
    return CropPlan(in_size, s_x, s_y, window, sched_x, sched_y, grid + jitter,
                    scaled_h, scaled_w, pad_to)


def build_crops(adv_image: np.ndarray, s_x: float, s_y: float, window: int,
                grid_step: int, beta: tuple[int, int], k_max: int,
                rng: np.random.Generator, use_sliding: bool = True,
                allow_downscale: bool = False) -> CropBatch:
    if window <= 0 or adv_image.shape[-1] != adv_image.shape[-2]:
        raise ScheduleError("image must be square and window positive")
    plan = build_crop_plan(adv_image.shape[-1], s_x, s_y, window, grid_step, beta,
                           k_max, rng, use_sliding, allow_downscale)
    stacked = plan.apply(adv_image)
    triples = [(ox, oy, stacked[i]) for i, (ox, oy) in enumerate(plan.offsets)]
    return CropBatch(crops=triples, s_x=s_x, s_y=s_y, plan=plan)


def coverage_mask(plan: CropPlan) -> np.ndarray:
    """Boolean union of all crop windows over the scaled extent."""
    h = plan.pad_to or plan.scaled_h
    w_ = plan.pad_to or plan.scaled_w
    mask = np.zeros((h, w_), dtype=bool)
    w = plan.window
    for ox, oy in plan.offsets:
        mask[oy : oy + w, ox : ox + w] = True
    return mask
