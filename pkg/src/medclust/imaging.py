"""Raw pixel data -> policy-filtered, windowed, resized 8-bit images.

The windowing transform maps rescaled intensities through a piecewise
linear ramp onto [0, 255]; everything at or below the lower window bound
W_l = W_c - W_w/2 goes to 0, everything at or above W_u = W_c + W_w/2 goes
to 255. Rounding is half-away-from-zero so exports are bit-reproducible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .dicom_io import DicomInstance
from .errors import (
    InvalidWindowError,
    MissingPixelDataError,
    NoMeaningfulFrameError,
    NoValidWindowError,
)


@dataclass(frozen=True)
class WindowingParams:
    """Rescale and window parameters, defaults applied when tags absent."""

    w_c: float
    w_w: float
    r_s: float = 1.0
    r_i: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.w_w) or self.w_w <= 0:
            raise InvalidWindowError(f"WindowWidth must be finite and > 0, got {self.w_w}")

    @property
    def w_l(self) -> float:
        return self.w_c - self.w_w / 2.0

    @property
    def w_u(self) -> float:
        return self.w_c + self.w_w / 2.0


@dataclass(frozen=True)
class PolicyThresholds:
    t_v: float = 0.1
    t_s: float = 0.1

    def __post_init__(self):
        if not (0 < self.t_v <= 1) and self.t_v != 0:
            raise ValueError(f"t_v out of range: {self.t_v}")
        if not (0 < self.t_s <= 1) and self.t_s != 0:
            raise ValueError(f"t_s out of range: {self.t_s}")


@dataclass
class ExportedImage:
    pixels: np.ndarray  # (size, size) uint8
    instance_id: str
    window: WindowingParams
    frame_index: int
    r_v: float
    r_s_ratio: float


def rescale(x_raw: np.ndarray, r_s: float = 1.0, r_i: float = 0.0) -> np.ndarray:
    """Elementwise affine map r_s * x + r_i in float64, no clamping."""
    return np.asarray(x_raw, dtype=np.float64) * float(r_s) + float(r_i)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def window_to_8bit(x: np.ndarray, w: WindowingParams, invert: bool = False) -> np.ndarray:
    """Piecewise window map onto uint8; invert for MONOCHROME1 sources."""
    if not math.isfinite(w.w_w) or w.w_w <= 0:
        raise InvalidWindowError(f"WindowWidth must be > 0, got {w.w_w}")
    x = np.asarray(x, dtype=np.float64)
    ramp = (1.0 / w.w_w) * (x - w.w_c + 0.5 * w.w_w) * 255.0
    out = _round_half_away(ramp)
    np.clip(out, 0.0, 255.0, out=out)
    out[x <= w.w_l] = 0.0
    out[x >= w.w_u] = 255.0
    out = out.astype(np.uint8)
    if invert:
        out = 255 - out
    return out


def select_window(centers, widths, x: np.ndarray,
                  r_s: float = 1.0, r_i: float = 0.0) -> WindowingParams:
    """First (W_c, W_w) candidate whose windowed image is not monochrome.

    Scalars broadcast against lists; candidates with invalid widths are
    skipped rather than fatal.
    """
    centers = [centers] if np.isscalar(centers) else list(centers)
    widths = [widths] if np.isscalar(widths) else list(widths)
    if len(centers) == 1 and len(widths) > 1:
        centers = centers * len(widths)
    if len(widths) == 1 and len(centers) > 1:
        widths = widths * len(centers)
    for c, w in zip(centers, widths):
        try:
            params = WindowingParams(w_c=float(c), w_w=float(w), r_s=r_s, r_i=r_i)
        except (InvalidWindowError, ValueError, TypeError):
            continue
        img = window_to_8bit(x, params)
        if np.unique(img).size > 1:
            return params
    raise NoValidWindowError("every window candidate yields a single-intensity image")


def value_policy(img: np.ndarray, t_v: float = 0.1) -> tuple[bool, float]:
    """r_v = distinct intensities / 256; accept iff r_v > t_v."""
    r_v = np.unique(np.asarray(img, dtype=np.uint8)).size / 256.0
    return r_v > t_v, r_v


def shape_policy(rows: int, cols: int, t_s: float = 0.1) -> tuple[bool, float]:
    """r_s = min(rows, cols) / max(rows, cols); accept iff r_s > t_s."""
    r = min(rows, cols) / max(rows, cols)
    return r > t_s, r


def select_frame(instance: DicomInstance, window: WindowingParams,
                 t_v: float = 0.1, invert: bool = False) -> tuple[int, np.ndarray, float]:
    """Lowest frame whose windowed 8-bit image passes the value policy."""
    for idx in range(instance.n_frames):
        raw = instance.frame_array(idx)
        img = window_to_8bit(rescale(raw, window.r_s, window.r_i), window, invert=invert)
        ok, r_v = value_policy(img, t_v)
        if ok:
            return idx, img, r_v
    raise NoMeaningfulFrameError(
        f"no frame of {instance.instance_id or '<unknown>'} passes the value policy")


def resize_pad(img: np.ndarray, size: int = 128) -> np.ndarray:
    """Bilinear scale so the long side becomes ``size``; zero-pad the rest.

    Pixel-center alignment; the shorter side rounds to nearest (min 1) and
    is centered, with any odd leftover pixel of padding going bottom/right.
    """
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    if h >= w:
        out_h = size
        out_w = max(1, int(round(w * size / h)))
    else:
        out_w = size
        out_h = max(1, int(round(h * size / w)))
    content = _bilinear(img, out_h, out_w)
    canvas = np.zeros((size, size), dtype=np.uint8)
    top = (size - out_h) // 2
    left = (size - out_w) // 2
    canvas[top:top + out_h, left:left + out_w] = content
    return canvas


def _bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = img.shape
    src = img.astype(np.float64)
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    out = top * (1 - wy) + bot * wy
    return np.clip(_round_half_away(out), 0, 255).astype(np.uint8)


def _window_candidates(instance: DicomInstance) -> tuple[list[float], list[float]]:
    wc = instance.tag("WindowCenter")
    ww = instance.tag("WindowWidth")
    if wc is None or ww is None:
        return [], []
    try:
        return wc.as_floats(), ww.as_floats()
    except ValueError:
        return [], []


def export_instance(instance: DicomInstance,
                    thresholds: PolicyThresholds = PolicyThresholds(),
                    size: int = 128,
                    invert_monochrome1: bool = True) -> ExportedImage:
    """Full export of one instance; raises with the policy that failed."""
    if instance.pixel is None:
        raise MissingPixelDataError(instance.instance_id or "<unknown>")
    if instance.samples_per_pixel != 1:
        raise MissingPixelDataError(
            f"SamplesPerPixel={instance.samples_per_pixel}: colour images are not exported")

    shape_ok, r_shape = shape_policy(instance.rows, instance.cols, thresholds.t_s)
    if not shape_ok:
        raise NoMeaningfulFrameError(
            f"shape policy rejected {instance.rows}x{instance.cols} (r_S={r_shape:.4f})")

    slope_tv = instance.tag("RescaleSlope")
    inter_tv = instance.tag("RescaleIntercept")
    r_s = slope_tv.as_float() if slope_tv else 1.0
    r_i = inter_tv.as_float() if inter_tv else 0.0
    invert = invert_monochrome1 and instance.photometric.strip().upper() == "MONOCHROME1"

    centers, widths = _window_candidates(instance)
    window = None
    for start_frame in range(instance.n_frames):
        rescaled = rescale(instance.frame_array(start_frame), r_s, r_i)
        if not centers:
            # no window tags: derive a full-range window from the data
            lo, hi = float(rescaled.min()), float(rescaled.max())
            if hi > lo:
                window = WindowingParams(w_c=(hi + lo) / 2.0, w_w=hi - lo, r_s=r_s, r_i=r_i)
                break
            continue
        try:
            window = select_window(centers, widths, rescaled, r_s=r_s, r_i=r_i)
            break
        except NoValidWindowError:
            continue
    if window is None:
        raise NoValidWindowError(
            f"no window candidate produces a non-monochrome image for "
            f"{instance.instance_id or '<unknown>'}")

    frame_idx, img, r_v = select_frame(instance, window, thresholds.t_v, invert=invert)
    return ExportedImage(
        pixels=resize_pad(img, size=size),
        instance_id=instance.instance_id,
        window=window,
        frame_index=frame_idx,
        r_v=r_v,
        r_s_ratio=r_shape,
    )


MANIFEST_FIELDS = ["instance_id", "exam_id", "frame", "W_c", "W_w", "r_V", "r_S", "reject_reason"]


def export_corpus(instances, out_dir: str | Path,
                  thresholds: PolicyThresholds = PolicyThresholds(),
                  size: int = 128) -> dict[str, str]:
    """Write <instance_id>.png per accepted instance plus a manifest CSV.

    Returns instance_id -> reject reason ('' when exported).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outcome: dict[str, str] = {}
    rows = []
    for inst in instances:
        try:
            exported = export_instance(inst, thresholds=thresholds, size=size)
        except Exception as exc:  # per-file policy failures must not kill the batch
            outcome[inst.instance_id] = type(exc).__name__
            rows.append([inst.instance_id, inst.exam_id, "", "", "", "", "", type(exc).__name__])
            continue
        Image.fromarray(exported.pixels, mode="L").save(out_dir / f"{inst.instance_id}.png")
        outcome[inst.instance_id] = ""
        rows.append([inst.instance_id, inst.exam_id, exported.frame_index,
                     exported.window.w_c, exported.window.w_w,
                     f"{exported.r_v:.6f}", f"{exported.r_s_ratio:.6f}", ""])
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        writer.writerows(rows)
    return outcome
