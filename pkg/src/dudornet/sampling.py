"""Binary k-space undersampling masks at a target acceleration.

All masks live on the Cartesian grid with the zero frequency at
``(H // 2, W // 2)``. Acceleration is grid size over sampled points.
"""

from __future__ import annotations

import json
import math
from functools import lru_cache
from pathlib import Path

import numpy as np
from skimage.draw import line as draw_line

from .core import (ConfigurationError, FormatError, Pattern, SamplingMask, achieved_acceleration,
                   load_array, save_array)

GOLDEN_ANGLE = 180.0 * (math.sqrt(5.0) - 1.0) / 2.0  # 111.246... degrees
TOLERANCE = 0.05
FULL_SAMPLING_BELOW = 1.2
RADIAL_ATTEMPTS = 64

__all__ = [
    "achieved_acceleration", "cartesian_mask", "radial_mask", "spiral_mask",
    "make_mask", "save_mask", "load_mask", "GOLDEN_ANGLE",
]


def _check_target(target_R):
    if not 1 <= target_R <= 16:
        raise ConfigurationError(f"target_R must lie in [1, 16], got {target_R}")


def _within(mask, target_R):
    return abs(achieved_acceleration(mask) - target_R) / target_R <= TOLERANCE


def cartesian_mask(H, W, target_R, center_fraction=0.08, seed=0) -> SamplingMask:
    """Full phase-encode rows: a fixed center band plus random rows."""
    _check_target(target_R)
    if not 0 <= center_fraction <= 0.5:
        raise ConfigurationError(f"center_fraction must lie in [0, 0.5], got {center_fraction}")
    n_rows = max(1, int(round(H / target_R)))
    n_center = math.ceil(center_fraction * H)
    if n_center > n_rows:
        raise ConfigurationError(
            f"{n_center} center rows exceed the budget of {n_rows} rows at R={target_R}")
    start = H // 2 - n_center // 2
    center = np.arange(start, start + n_center)
    rest = np.setdiff1d(np.arange(H), center)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(rest, size=n_rows - n_center, replace=False)
    rows = np.zeros(H, dtype=bool)
    rows[center] = True
    rows[chosen] = True
    mask = np.repeat(rows[:, None], W, axis=1)
    return SamplingMask(mask, Pattern.CARTESIAN, target_R, seed)


# --- radial ----------------------------------------------------------------

def _radial_spokes(H, W, n_spokes, theta0):
    mask = np.zeros((H, W), dtype=bool)
    cy, cx = H // 2, W // 2
    reach = math.hypot(H, W) / 2 + 1
    for i in range(n_spokes):
        theta = math.radians((theta0 + i * GOLDEN_ANGLE) % 180.0)
        dy, dx = reach * math.sin(theta), reach * math.cos(theta)
        for sign in (1, -1):
            rr, cc = draw_line(cy, cx, int(round(cy + sign * dy)), int(round(cx + sign * dx)))
            keep = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
            mask[rr[keep], cc[keep]] = True
    return mask


def _bisect_count(build, target_R, lo, hi):
    """Smallest-error integer parameter in [lo, hi] for a monotone sparsifier.

    ``build(n)`` must produce masks whose acceleration decreases with ``n``.
    """
    if achieved_acceleration(build(lo)) <= target_R:
        hi = lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if achieved_acceleration(build(mid)) > target_R:
            lo = mid
        else:
            hi = mid
    best = min({lo, hi}, key=lambda n: abs(achieved_acceleration(build(n)) - target_R))
    return best, build(best)


@lru_cache(maxsize=512)
def _radial_cached(H, W, target_R, seed):
    # Spoke granularity can straddle the tolerance window on small grids, so
    # further initial angles are drawn from the same seeded stream.
    rng = np.random.default_rng(seed)
    for _ in range(RADIAL_ATTEMPTS):
        theta0 = float(rng.uniform(0.0, 180.0))
        _, mask = _bisect_count(lambda k: _radial_spokes(H, W, k, theta0), target_R, 1, H + W)
        if _within(mask, target_R):
            return mask
    raise ConfigurationError(
        f"no spoke count in [1, {H + W}] reaches R={target_R} within 5% on {H}x{W}")


def radial_mask(H, W, target_R, seed=0) -> SamplingMask:
    """Golden-angle spokes through the grid center."""
    _check_target(target_R)
    if target_R < FULL_SAMPLING_BELOW:
        return SamplingMask(np.ones((H, W)), Pattern.RADIAL, target_R, seed)
    return SamplingMask(_radial_cached(H, W, float(target_R), seed), Pattern.RADIAL,
                        target_R, seed)


# --- spiral ----------------------------------------------------------------

def _refine_roots(fun, lo, hi, n_iter=60):
    """Vectorised bisection for sign changes of ``fun`` bracketed by [lo, hi]."""
    f_lo = fun(lo)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        f_mid = fun(mid)
        left = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(left, mid, lo)
        f_lo = np.where(left, f_mid, f_lo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def _spiral_coords(t, off, a, center, axis):
    """Row (axis 0) or column (axis 1) of the arm ``r = a * t`` rotated by ``off``."""
    trig = np.sin if axis == 0 else np.cos
    return center[axis] + a * t * trig(t + off)


def _spiral_dcoords(t, off, a, axis):
    if axis == 0:
        return a * np.sin(t + off) + a * t * np.cos(t + off)
    return a * np.cos(t + off) - a * t * np.sin(t + off)


def _spiral_arms(H, W, a, n_arms, phase, step=0.5):
    """Grid cells hit by ``n_arms`` interleaved arms.

    The arms are sampled densely (spacing below ``step`` pixels) only to
    bracket events. Each crossing of an integer row or column line is then
    located to machine precision and the cell whose center is nearest to
    the crossing is marked, the curve analogue of Bresenham's
    one-pixel-per-major-step rule. Refining ``step`` therefore leaves the
    mask unchanged.
    """
    center = (H // 2, W // 2)
    theta_max = math.hypot(H, W) / 2 / a
    speed = a * math.sqrt(1 + theta_max ** 2)
    n = max(2, int(math.ceil(theta_max * speed / step)) + 1)
    theta = np.linspace(0.0, theta_max, n)
    offs = phase + 2 * math.pi * np.arange(n_arms) / n_arms
    rows, cols = [np.full(n_arms, center[0])], [np.full(n_arms, center[1])]
    for axis in (0, 1):
        d = _spiral_dcoords(theta[None, :], offs[:, None], a, axis)
        arm, i = np.nonzero(np.sign(d[:, :-1]) * np.sign(d[:, 1:]) <= 0)
        ext = _refine_roots(lambda t: _spiral_dcoords(t, offs[arm], a, axis),
                            theta[i], theta[i + 1])
        # monotone pieces of this coordinate, per arm
        k_arm = np.concatenate([np.arange(n_arms), arm, np.arange(n_arms)])
        k_t = np.concatenate([np.zeros(n_arms), ext, np.full(n_arms, theta_max)])
        order = np.lexsort((k_t, k_arm))
        k_arm, k_t = k_arm[order], k_t[order]
        same = k_arm[:-1] == k_arm[1:]
        p_arm, t0, t1 = k_arm[:-1][same], k_t[:-1][same], k_t[1:][same]
        v0 = _spiral_coords(t0, offs[p_arm], a, center, axis)
        v1 = _spiral_coords(t1, offs[p_arm], a, center, axis)
        first = np.ceil(np.minimum(v0, v1))
        counts = np.maximum(np.floor(np.maximum(v0, v1)) - first + 1, 0).astype(np.int64)
        rep = np.repeat(np.arange(first.size), counts)
        within = np.arange(rep.size) - np.repeat(np.cumsum(counts) - counts, counts)
        ks = first[rep] + within
        sgn = np.where(v1[rep] >= v0[rep], 1.0, -1.0)
        r_off = offs[p_arm[rep]]
        roots = _refine_roots(
            lambda t: sgn * (_spiral_coords(t, r_off, a, center, axis) - ks),
            t0[rep], t1[rep])
        other = np.floor(_spiral_coords(roots, r_off, a, center, 1 - axis) + 0.5)
        if axis == 0:
            rows.append(ks)
            cols.append(other)
        else:
            rows.append(other)
            cols.append(ks)
    rr = np.concatenate(rows).astype(np.int64)
    cc = np.concatenate(cols).astype(np.int64)
    keep = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
    mask = np.zeros((H, W), dtype=bool)
    mask[rr[keep], cc[keep]] = True
    return mask


def _spiral_search(H, W, target_R, n_arms, phase):
    """Bisect the spiral pitch ``a`` (acceleration grows with ``a``)."""
    lo = 0.25 * n_arms / (2 * math.pi)
    hi = 4.0 * target_R * n_arms / (2 * math.pi)
    best = None
    for _ in range(40):
        mid = math.sqrt(lo * hi)
        mask = _spiral_arms(H, W, mid, n_arms, phase)
        r = achieved_acceleration(mask)
        if best is None or abs(r - target_R) < abs(best[1] - target_R):
            best = (mid, r, mask)
        if abs(r - target_R) / target_R <= TOLERANCE / 4:
            break
        if r > target_R:
            hi = mid
        else:
            lo = mid
    return best


@lru_cache(maxsize=512)
def _spiral_cached(H, W, target_R, seed):
    # enough interleaves that arms tile the central H/8 x W/8 block densely
    base = max(1, math.ceil(2 * math.pi * min(H, W) / 16))
    rng = np.random.default_rng(seed)
    u = float(rng.uniform())
    for n_arms in (base, base + 1, base - 1, base + 2, base * 2, max(1, base // 2)):
        phase = u * 2 * math.pi / n_arms
        a, r, mask = _spiral_search(H, W, target_R, n_arms, phase)
        if abs(r - target_R) / target_R <= TOLERANCE:
            return a, n_arms, phase, mask
    raise ConfigurationError(f"spiral search failed for R={target_R} on {H}x{W}")


def spiral_mask(H, W, target_R, seed=0) -> SamplingMask:
    """Interleaved Archimedean spirals ``r = a * theta`` from the grid center."""
    _check_target(target_R)
    if target_R < FULL_SAMPLING_BELOW:
        return SamplingMask(np.ones((H, W)), Pattern.SPIRAL, target_R, seed)
    mask = _spiral_cached(H, W, float(target_R), seed)[3]
    return SamplingMask(mask, Pattern.SPIRAL, target_R, seed)


def spiral_parameters(H, W, target_R, seed=0):
    """``(a, n_arms, phase)`` chosen by :func:`spiral_mask`."""
    return _spiral_cached(H, W, float(target_R), seed)[:3]


def make_mask(pattern, H, W, target_R, seed=0, center_fraction=0.08) -> SamplingMask:
    pattern = Pattern(pattern)
    if pattern is Pattern.CARTESIAN:
        return cartesian_mask(H, W, target_R, center_fraction, seed)
    if pattern is Pattern.RADIAL:
        return radial_mask(H, W, target_R, seed)
    return spiral_mask(H, W, target_R, seed)


def save_mask(path, mask: SamplingMask) -> Path:
    """Write ``<path>.dar`` plus a ``<path>.json`` sidecar with the mask metadata."""
    path = Path(path).with_suffix("")
    save_array(path.with_suffix(".dar"), mask.mask)
    path.with_suffix(".json").write_text(json.dumps(mask.metadata(), indent=1) + "\n")
    return path.with_suffix(".dar")


def load_mask(path) -> SamplingMask:
    path = Path(path).with_suffix("")
    meta = json.loads(path.with_suffix(".json").read_text())
    mask = SamplingMask(load_array(path.with_suffix(".dar")), meta["pattern"], meta["target_R"],
                        meta["seed"])
    if abs(mask.achieved_R - meta["achieved_R"]) > 1e-9 * mask.achieved_R:
        raise FormatError(f"{path}: sidecar achieved_R disagrees with the stored mask")
    return mask
