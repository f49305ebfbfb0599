"""Procedural subject scenes.

A SceneSpec fully determines a rendered scene: shape family, color,
texture, style, background color, pose (rotation/translation/scale) and an
optional corner decoration. Rendering is a pure function of the spec and
yields the image plus ground-truth foreground mask and a depth surrogate
(normalized distance transform of the mask).

Rendering is deliberately hard-edged (each pixel is exactly one palette
color, no anti-aliasing) so that background subtraction recovers the
foreground mask exactly and background repaints leave the foreground
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from scipy import ndimage


def _rgb(r, g, b):
    return np.array([r, g, b], dtype=np.float32) * 2.0 - 1.0


SUBJECT_COLORS = {
    "red": _rgb(0.90, 0.15, 0.15),
    "green": _rgb(0.15, 0.75, 0.20),
    "blue": _rgb(0.20, 0.35, 0.95),
    "yellow": _rgb(0.95, 0.85, 0.15),
    "orange": _rgb(0.95, 0.55, 0.10),
    "purple": _rgb(0.60, 0.20, 0.80),
    "cyan": _rgb(0.10, 0.80, 0.85),
    "magenta": _rgb(0.90, 0.20, 0.70),
}

DECORATION_COLORS = {
    "white": _rgb(0.97, 0.97, 0.97),
    "yellow": SUBJECT_COLORS["yellow"],
    "cyan": SUBJECT_COLORS["cyan"],
}

BACKGROUNDS = {
    "charcoal": _rgb(0.10, 0.10, 0.12),
    "navy": _rgb(0.05, 0.08, 0.30),
    "olive": _rgb(0.20, 0.22, 0.08),
    "maroon": _rgb(0.30, 0.06, 0.10),
    "teal": _rgb(0.04, 0.25, 0.28),
    "slate": _rgb(0.26, 0.29, 0.34),
}

SHAPES = ("circle", "square", "triangle", "star", "hexagon", "diamond", "cross", "ring")
TEXTURES = ("solid", "striped", "dotted", "checkered")
STYLES = ("flat", "outlined", "glowing", "faded")
DECORATION_KINDS = ("dot", "bar")
POSITIONS = {
    "top-left": (-0.68, -0.68),
    "top-right": (0.68, -0.68),
    "bottom-left": (-0.68, 0.68),
    "bottom-right": (0.68, 0.68),
}
DECORATION_REGION_HALFWIDTH = 0.20


@dataclass(frozen=True)
class Decoration:
    kind: str
    color: str
    position: str


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    color: str
    texture: str
    style: str
    background: str
    angle: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    scale: float = 0.5
    decoration: Optional[Decoration] = None

    def subject_key(self) -> tuple:
        """Pose-free identity of the subject (shared across views)."""
        return (self.shape, self.color, self.texture, self.style, self.background)

    def with_pose(self, angle: float, tx: float, ty: float, scale: float) -> "SceneSpec":
        return SceneSpec(self.shape, self.color, self.texture, self.style, self.background,
                         angle, tx, ty, scale, self.decoration)

    def with_attrs(self, **kwargs) -> "SceneSpec":
        d = asdict(self)
        deco = d.pop("decoration")
        d["decoration"] = self.decoration
        d.update(kwargs)
        return SceneSpec(**d)


def _shape_indicator(shape: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    r2 = x * x + y * y
    if shape == "circle":
        return r2 <= 1.0
    if shape == "ring":
        return (r2 <= 1.0) & (r2 >= 0.55**2)
    if shape == "square":
        return np.maximum(np.abs(x), np.abs(y)) <= 0.88
    if shape == "diamond":
        return np.abs(x) + np.abs(y) <= 1.1
    if shape == "triangle":
        return (y <= 0.85) & (y >= -0.95 + 1.3 * np.abs(x))
    if shape == "hexagon":
        p = np.maximum(np.abs(x), np.maximum(np.abs(0.5 * x + 0.866 * y), np.abs(0.5 * x - 0.866 * y)))
        return p <= 0.92
    if shape == "cross":
        return ((np.abs(x) <= 0.34) & (np.abs(y) <= 1.0)) | ((np.abs(y) <= 0.34) & (np.abs(x) <= 1.0))
    if shape == "star":
        theta = np.arctan2(y, x)
        radius = 0.42 + 0.58 * (0.5 + 0.5 * np.cos(5.0 * theta)) ** 2
        return r2 <= radius * radius
    raise ValueError(f"unknown shape {shape!r}")


def _coords(size: int, supersample: int) -> tuple[np.ndarray, np.ndarray]:
    n = size * supersample
    axis = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    return np.meshgrid(axis, axis, indexing="xy")


def _to_pixel(field: np.ndarray, size: int, supersample: int) -> np.ndarray:
    """Average a supersampled boolean field down to per-pixel coverage."""
    f = field.reshape(size, supersample, size, supersample)
    return f.mean(axis=(1, 3))


def _subject_frame(spec: SceneSpec, wx: np.ndarray, wy: np.ndarray):
    ca, sa = math.cos(-spec.angle), math.sin(-spec.angle)
    ux = (wx - spec.tx) / spec.scale
    uy = (wy - spec.ty) / spec.scale
    return ca * ux - sa * uy, sa * ux + ca * uy


def _texture_tone(texture: str, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Boolean field: True where the secondary (darker) tone applies."""
    if texture == "solid":
        return np.zeros_like(sx, dtype=bool)
    if texture == "striped":
        return np.sin(sx * 3.0 * math.pi) > 0.0
    if texture == "dotted":
        gx = np.mod(sx + 0.25, 0.5) - 0.25
        gy = np.mod(sy + 0.25, 0.5) - 0.25
        return gx * gx + gy * gy <= 0.14**2
    if texture == "checkered":
        return (np.floor(sx * 2.0) + np.floor(sy * 2.0)) % 2 == 0
    raise ValueError(f"unknown texture {texture!r}")


def _mix_toward(color: np.ndarray, target: np.ndarray, amount: float) -> np.ndarray:
    return color * (1.0 - amount) + target * amount


def decoration_footprint(deco: Decoration, size: int, supersample: int = 4) -> np.ndarray:
    wx, wy = _coords(size, supersample)
    cx, cy = POSITIONS[deco.position]
    if deco.kind == "dot":
        field = (wx - cx) ** 2 + (wy - cy) ** 2 <= 0.12**2
    elif deco.kind == "bar":
        field = (np.abs(wx - cx) <= 0.18) & (np.abs(wy - cy) <= 0.07)
    else:
        raise ValueError(f"unknown decoration kind {deco.kind!r}")
    return _to_pixel(field, size, supersample) >= 0.5


def decoration_region_mask(position: str, size: int) -> np.ndarray:
    """Editable-region mask ({-1,+1}) for add/remove edits at a corner."""
    wx, wy = _coords(size, 1)
    cx, cy = POSITIONS[position]
    h = DECORATION_REGION_HALFWIDTH
    inside = (np.abs(wx - cx) <= h) & (np.abs(wy - cy) <= h)
    return np.where(inside, 1.0, -1.0).astype(np.float32)[None]


def render_scene(spec: SceneSpec, size: int = 32, supersample: int = 4):
    """Render (image, mask, depth); a pure function of the spec.

    mask covers every non-background pixel (subject, halo, decoration).
    depth is the euclidean distance transform of the mask, normalized
    to [0, 1]; exactly 0 on background.
    """
    wx, wy = _coords(size, supersample)
    sx, sy = _subject_frame(spec, wx, wy)
    body = _shape_indicator(spec.shape, sx, sy)

    subject = _to_pixel(body, size, supersample) >= 0.5
    halo = np.zeros_like(subject)
    if spec.style == "outlined":
        inner = _to_pixel(_shape_indicator(spec.shape, sx / 0.70, sy / 0.70), size, supersample) >= 0.5
        subject = subject & ~inner
    elif spec.style == "glowing":
        outer = _to_pixel(_shape_indicator(spec.shape, sx / 1.25, sy / 1.25), size, supersample) >= 0.5
        halo = outer & ~subject

    color = SUBJECT_COLORS[spec.color]
    if spec.style == "faded":
        color = _mix_toward(color, _rgb(1.0, 1.0, 1.0), 0.45)
    tone2 = _mix_toward(color, _rgb(0.0, 0.0, 0.0), 0.45)
    halo_color = _mix_toward(SUBJECT_COLORS[spec.color], _rgb(1.0, 1.0, 1.0), 0.6)

    # per-pixel texture field evaluated at pixel centers in the subject frame
    pwx, pwy = _coords(size, 1)
    psx, psy = _subject_frame(spec, pwx, pwy)
    tone_field = _texture_tone(spec.texture, psx, psy)

    img = np.empty((3, size, size), dtype=np.float32)
    img[:] = BACKGROUNDS[spec.background][:, None, None]
    img[:, halo] = halo_color[:, None]
    fg_color = np.where(tone_field[None], tone2[:, None, None], color[:, None, None])
    img[:, subject] = fg_color[:, subject]

    fg = subject | halo
    if spec.decoration is not None:
        deco = decoration_footprint(spec.decoration, size, supersample)
        img[:, deco] = DECORATION_COLORS[spec.decoration.color][:, None]
        fg = fg | deco

    mask = np.where(fg, 1.0, -1.0).astype(np.float32)[None]
    depth = depth_from_mask(mask)
    return img, mask, depth


def depth_from_mask(mask: np.ndarray) -> np.ndarray:
    """Distance-transform depth surrogate in [0, 1]; 0 only on background."""
    fg = mask[0] > 0
    dist = ndimage.distance_transform_edt(fg)
    peak = dist.max()
    if peak > 0:
        dist = dist / peak
    return dist.astype(np.float32)[None]


def sample_scene(rng: np.random.Generator, decorated: bool = False) -> SceneSpec:
    deco = None
    if decorated:
        deco = Decoration(
            kind=str(rng.choice(DECORATION_KINDS)),
            color=str(rng.choice(list(DECORATION_COLORS))),
            position=str(rng.choice(list(POSITIONS))),
        )
    return SceneSpec(
        shape=str(rng.choice(SHAPES)),
        color=str(rng.choice(list(SUBJECT_COLORS))),
        texture=str(rng.choice(TEXTURES)),
        style=str(rng.choice(STYLES)),
        background=str(rng.choice(list(BACKGROUNDS))),
        decoration=deco,
        **_sample_pose(rng),
    )


def _sample_pose(rng: np.random.Generator) -> dict:
    return {
        "angle": float(rng.uniform(0.0, 2.0 * math.pi)),
        "tx": float(rng.uniform(-0.10, 0.10)),
        "ty": float(rng.uniform(-0.10, 0.10)),
        "scale": float(rng.uniform(0.42, 0.55)),
    }


def sample_views(rng: np.random.Generator, spec: SceneSpec, n_views: int) -> list[SceneSpec]:
    """Same subject under n different poses (the multi-view surrogate)."""
    return [spec.with_pose(**_sample_pose(rng)) for _ in range(n_views)]
