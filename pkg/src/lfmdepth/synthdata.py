"""Procedural paired image/depth scenes with a controllable long-tail depth histogram.

A scene is a stack of fronto-parallel rectangles and ellipses in front of a
far background plane.  Primitive depths follow ``d_min + (d_max - d_min) * u**a``
with ``u`` uniform and ``a`` the tail exponent, so ``a > 1`` piles mass near
the camera.  The nearest primitive wins at every pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .normalize import DepthMap
from .rng import stream


@dataclass(frozen=True)
class SceneSpec:
    size: int = 64
    primitives: tuple[int, int] = (4, 9)
    d_min: float = 1.0
    d_max: float = 20.0
    tail_exponent: float = 2.0
    texture_scale: float = 0.1
    seed: int = 0

    def check(self) -> None:
        if self.size < 2:
            raise ValueError("size must be >= 2")
        lo, hi = self.primitives
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid primitive count range {self.primitives}")
        if not (self.d_min > 0 and self.d_max > self.d_min):
            raise ValueError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        if self.tail_exponent <= 0:
            raise ValueError("tail_exponent must be positive")
        if self.texture_scale < 0:
            raise ValueError("texture_scale must be non-negative")


@dataclass(frozen=True)
class Primitive:
    kind: str          # "rect" or "ellipse"
    cx: float          # centre, fraction of width
    cy: float
    hx: float          # half extents, fraction of size
    hy: float
    depth: float       # meters
    albedo: float = 1.0


@dataclass
class Sample:
    image: np.ndarray          # (3, H, W) float32
    depth: DepthMap
    seed: int
    primitives: list[Primitive] = field(default_factory=list)


def sample_primitives(spec: SceneSpec, rng: np.random.Generator) -> list[Primitive]:
    lo, hi = spec.primitives
    count = int(rng.integers(lo, hi + 1))
    prims = []
    for _ in range(count):
        u = rng.uniform()
        depth = spec.d_min + (spec.d_max - spec.d_min) * u ** spec.tail_exponent
        prims.append(Primitive(
            kind="rect" if rng.uniform() < 0.5 else "ellipse",
            cx=rng.uniform(0.1, 0.9), cy=rng.uniform(0.1, 0.9),
            hx=rng.uniform(0.12, 0.45), hy=rng.uniform(0.12, 0.45),
            depth=float(depth), albedo=rng.uniform(0.7, 1.0)))
    return prims


def rasterize(spec: SceneSpec, prims: list[Primitive]) -> tuple[np.ndarray, np.ndarray]:
    """Depth (meters) and albedo maps with nearest-primitive-wins occlusion."""
    n = spec.size
    coords = (np.arange(n) + 0.5) / n
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    depth = np.full((n, n), spec.d_max, dtype=np.float64)
    albedo = np.ones((n, n), dtype=np.float64)
    for p in prims:
        dx, dy = (xx - p.cx) / p.hx, (yy - p.cy) / p.hy
        if p.kind == "rect":
            inside = (np.abs(dx) <= 1) & (np.abs(dy) <= 1)
        else:
            inside = dx * dx + dy * dy <= 1
        closer = inside & (p.depth < depth)
        depth[closer] = p.depth
        albedo[closer] = p.albedo
    return depth, albedo


def _smooth_noise(rng: np.random.Generator, n: int, cells: int) -> np.ndarray:
    """Value noise: coarse Gaussian grid upsampled by nearest-neighbour blocks."""
    coarse = rng.standard_normal((cells, cells))
    rep = -(-n // cells)
    return np.kron(coarse, np.ones((rep, rep)))[:n, :n]


def render_image(spec: SceneSpec, depth: np.ndarray, albedo: np.ndarray, seed: int) -> np.ndarray:
    """Three channels: inverse-depth shading, depth-edge strength, depth-faded texture."""
    rng = stream(seed, "texture")
    n = spec.size
    inv = spec.d_min / depth
    shading = albedo * inv
    gy, gx = np.gradient(inv)
    edges = np.sqrt(gx * gx + gy * gy)
    edges = edges / max(edges.max(), 1e-12)
    fine = rng.standard_normal((n, n))
    coarse = _smooth_noise(rng, n, max(n // 8, 1))
    texture = spec.texture_scale * (np.sqrt(inv) * fine + (1.0 - np.sqrt(inv)) * coarse)
    return np.stack([shading, edges, texture]).astype(np.float32)


def render(spec: SceneSpec, prims: list[Primitive], seed: int = 0) -> Sample:
    depth, albedo = rasterize(spec, prims)
    image = render_image(spec, depth, albedo, seed)
    return Sample(image, DepthMap(depth.astype(np.float32)), seed, list(prims))


def sample_seed(base: int, index: int) -> int:
    return int(stream(base, "scene-seed", index).integers(0, 2**62))


def generate(spec: SceneSpec, n: int) -> list[Sample]:
    spec.check()
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(n):
        s = sample_seed(spec.seed, i)
        out.append(render(spec, sample_primitives(spec, stream(s, "scene")), s))
    return out


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

def write_sample(sample: Sample, image_path, depth_path) -> None:
    fileio.write_pfm(image_path, sample.image)
    fileio.write_pfm(depth_path, sample.depth.values)


def read_sample(image_path, depth_path, seed: int = 0) -> Sample:
    image = fileio.read_pfm(image_path)
    if image.ndim != 3:
        raise fileio.FormatError("image file must be a 3-channel PF file", 0, image_path)
    depth = fileio.read_pfm(depth_path)
    return Sample(image, DepthMap(depth), seed)


def write_image_pgm(image: np.ndarray, stem) -> list[Path]:
    """Alternative image storage: one 16-bit PGM per channel, scaled to the channel range.

    Returns the paths; the scale ``lo hi`` per channel is written to ``<stem>.range``.
    """
    stem = Path(stem)
    paths, ranges = [], []
    for c in range(image.shape[0]):
        lo, hi = float(image[c].min()), float(image[c].max())
        p = stem.with_name(f"{stem.name}.c{c}.pgm")
        fileio.write_pgm(p, fileio.to_preview(image[c], lo, hi, 65535), 65535)
        paths.append(p)
        ranges.append(f"{lo!r} {hi!r}")
    fileio.atomic_write_bytes(stem.with_name(stem.name + ".range"), ("\n".join(ranges) + "\n").encode())
    return paths


def read_image_pgm(stem) -> np.ndarray:
    stem = Path(stem)
    ranges = stem.with_name(stem.name + ".range").read_text().split("\n")
    chans = []
    for c, line in enumerate(r for r in ranges if r.strip()):
        lo, hi = (float(v) for v in line.split())
        q, maxval = fileio.read_pgm(stem.with_name(f"{stem.name}.c{c}.pgm"))
        span = hi - lo if hi > lo else 1.0
        chans.append(lo + q / maxval * span)
    return np.stack(chans).astype(np.float32)


def write_dataset(samples: list[Sample], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        img_name, depth_name = f"sample_{i:04d}.image.pfm", f"sample_{i:04d}.depth.pfm"
        write_sample(s, out / img_name, out / depth_name)
        rows.append((img_name, depth_name, s.seed))
    manifest = out / fileio.MANIFEST_NAME
    fileio.write_manifest(manifest, rows)
    return manifest


def read_dataset(path) -> list[Sample]:
    return [read_sample(img, depth, seed) for img, depth, seed in fileio.read_manifest(path)]
