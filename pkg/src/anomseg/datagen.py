"""Procedural two-domain toy dataset for anomaly segmentation.

Two training domains are produced:

* ``V`` (void-class style): the anomaly is rendered with the scene's own
  palette and noise texture, so it is stylistically consistent with the
  background.
* ``A`` (anomaly-mix style): the anomaly is pasted with a saturated,
  out-of-palette colour and a striped texture, and its size varies over a
  wider range.

A third domain ``S`` is a held-out shifted test domain with a different
scene palette and anomaly shapes never used for training.

Besides the image, every sample carries the artifacts a dissimilarity
network consumes: a semantic map (what an upstream segmenter would
predict; anomalies are labelled with the surrounding background class), a
reconstruction in which anomalies are in-painted with background texture,
and an uncertainty map peaking on anomaly boundaries.

Ground-truth encoding: anomaly = 1, a ``VOID_RING_WIDTH`` pixel ring around
each anomaly = 255 (ignored), everything else = 0.
"""

from __future__ import annotations

import colorsys
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DatasetError, EmptyDatasetError, GenerationError

GENERATOR_VERSION = "anomseg-toy-1"
MANIFEST_NAME = "manifest.json"

SHAPES = ("disk", "rectangle", "triangle", "blob")
SHIFTED_SHAPES = ("ring", "cross")
DOMAINS = ("V", "A", "S")
_DOMAIN_CODE = {"V": 1, "A": 2, "S": 3}

IGNORE_LABEL = 255
VOID_RING_WIDTH = 2
RECON_DILATION = 1
NOISE_STD = 0.03
# one "palette distance unit" in RGB space ([0, 1] per channel)
PALETTE_UNIT = 0.05
# every scene palette colour (jitter included) lies inside this RGB box,
# so any colour with a channel outside it is outside the palette hull
PALETTE_BOX = (0.25, 0.65)
UNCERTAINTY_BASE = 0.02
UNCERTAINTY_PEAK = 0.75
UNCERTAINTY_SIGMA = 1.5
DEFAULT_UNCERTAINTY_NOISE = 0.1

AREA_RANGE = {"V": (0.01, 0.20), "A": (0.005, 0.35), "S": (0.01, 0.20)}
MAX_PLACEMENT_TRIES = 50

FILES = {
    "image": "image.png",
    "recon": "recon.png",
    "uncertainty": "uncertainty.png",
    "semantic": "semantic.png",
    "gt": "gt.png",
}
ENCODINGS = {
    "image": "8-bit RGB PNG; value v maps to v/255",
    "recon": "8-bit RGB PNG; value v maps to v/255",
    "uncertainty": "16-bit grayscale PNG; value v maps to v/65535",
    "semantic": "8-bit grayscale PNG; background class index",
    "gt": "8-bit grayscale PNG; 0 normal, 1 anomaly, 255 void/ignored",
}


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    num_background_classes: int = 3
    anomaly_shape_set: tuple[str, ...] = SHAPES
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "anomaly_shape_set", tuple(self.anomaly_shape_set))
        self.validate()

    def validate(self) -> None:
        for name in ("height", "width"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 32:
                raise ConfigError(f"{name} must be an integer >= 32, got {value!r}")
        k = self.num_background_classes
        if not isinstance(k, (int, np.integer)) or not 2 <= k <= 254:
            raise ConfigError(f"num_background_classes must be in [2, 254], got {k!r}")
        if not self.anomaly_shape_set:
            raise ConfigError("anomaly_shape_set must not be empty")
        unknown = [s for s in self.anomaly_shape_set if s not in SHAPES]
        if unknown:
            raise ConfigError(f"anomaly_shape_set has unknown shapes {unknown}; allowed {list(SHAPES)}")
        if not isinstance(self.rng_seed, (int, np.integer)) or self.rng_seed < 0:
            raise ConfigError(f"rng_seed must be a non-negative integer, got {self.rng_seed!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anomaly_shape_set"] = list(self.anomaly_shape_set)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {"height", "width", "num_background_classes", "anomaly_shape_set", "rng_seed"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown scene spec field(s): {sorted(extra)}")
        return cls(**d)


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3, float64 in [0, 1]
    semantic_map: np.ndarray  # H x W, uint8 class index
    recon_image: np.ndarray  # H x W x 3, float64 in [0, 1]
    uncertainty_map: np.ndarray  # H x W, float64 in [0, 1]
    gt_map: np.ndarray  # H x W, uint8 in {0, 1, 255}
    domain: str
    sample_id: str = ""

    @property
    def anomaly_mask(self) -> np.ndarray:
        return self.gt_map == 1

    def equals(self, other: "Sample") -> bool:
        return self.domain == other.domain and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("image", "semantic_map", "recon_image", "uncertainty_map", "gt_map")
        )


@dataclass
class DatasetManifest:
    samples: list[dict]
    spec: dict
    generator_version: str = GENERATOR_VERSION
    encodings: dict = field(default_factory=lambda: dict(ENCODINGS))

    def to_json(self) -> dict:
        return {
            "format": "anomseg-dataset",
            "generator_version": self.generator_version,
            "spec": self.spec,
            "encodings": self.encodings,
            "samples": self.samples,
        }


def _rng(spec: SceneSpec, seed: int, *stream: int) -> np.random.Generator:
    if seed < 0:
        raise ConfigError(f"seed must be >= 0, got {seed}")
    return np.random.default_rng([int(spec.rng_seed), int(seed), *stream])


def _quantize(x: np.ndarray, levels: int = 255) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * levels) / levels


def _hsv_palette(k: int, hue_offset: float, sat: float, val: float) -> np.ndarray:
    return np.array(
        [colorsys.hsv_to_rgb((hue_offset + c / k) % 1.0, sat, val) for c in range(k)]
    )


def scene_palette(spec: SceneSpec, seed: int, style: str = "base") -> np.ndarray:
    """Per-scene class colours, shape (K, 3).

    ``base`` palettes are muted mid-range colours shared by domains V and A;
    ``shifted`` is the brighter, hue-interleaved palette of the test domain.
    """
    k = spec.num_background_classes
    if style == "base":
        base = _hsv_palette(k, 0.05, 0.4, 0.6)
    elif style == "shifted":
        base = _hsv_palette(k, 0.05 + 0.5 / k, 0.3, 0.75)
    else:
        raise ConfigError(f"unknown palette style {style!r}")
    jitter = _rng(spec, seed, 7).uniform(-0.03, 0.03, size=base.shape)
    return np.clip(base + jitter, 0.0, 1.0)


def _render_background(semantic_map: np.ndarray, palette: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    img = palette[semantic_map] + rng.normal(0.0, NOISE_STD, size=semantic_map.shape + (3,))
    return _quantize(img)


def gen_scene(spec: SceneSpec, seed: int, style: str = "base") -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-constant-plus-noise background and its semantic map.

    Regions are Voronoi cells; every background class owns at least one
    cell, so each scene shows all ``num_background_classes`` classes.
    """
    spec.validate()
    rng = _rng(spec, seed, 0)
    h, w, k = spec.height, spec.width, spec.num_background_classes
    n_sites = k + int(rng.integers(0, k + 1))
    flat = rng.choice(h * w, size=n_sites, replace=False)
    sites = np.stack(np.unravel_index(flat, (h, w)), axis=1).astype(float)
    labels = np.concatenate([rng.permutation(k), rng.integers(0, k, size=n_sites - k)])
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    semantic = labels[np.argmin(d2, axis=-1)].astype(np.uint8)
    image = _render_background(semantic, scene_palette(spec, seed, style), rng)
    return image, semantic


# ---------------------------------------------------------------- shapes


def _polygon_mask(yy, xx, verts: np.ndarray) -> np.ndarray:
    """Inside test for a convex polygon given counter-clockwise or clockwise vertices."""
    inside_pos = np.ones(yy.shape, dtype=bool)
    inside_neg = np.ones(yy.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        (y0, x0), (y1, x1) = verts[i], verts[(i + 1) % n]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        inside_pos &= cross >= 0
        inside_neg &= cross <= 0
    return inside_pos | inside_neg


def _shape_geometry(shape: str, area: float, rng: np.random.Generator):
    """Return (raster function of (dy, dx) offsets, bounding radius)."""
    theta = rng.uniform(0, 2 * np.pi)
    c, s = math.cos(theta), math.sin(theta)

    def rot(pts):
        pts = np.asarray(pts, dtype=float)
        return np.stack([pts[:, 0] * c - pts[:, 1] * s, pts[:, 0] * s + pts[:, 1] * c], axis=1)

    if shape == "disk":
        r = math.sqrt(area / math.pi)
        return (lambda dy, dx: dy**2 + dx**2 <= r * r), r
    if shape == "rectangle":
        aspect = rng.uniform(0.5, 2.0)
        hw = math.sqrt(area * aspect) / 2
        hh = area / (4 * hw)
        verts = rot([(-hh, -hw), (-hh, hw), (hh, hw), (hh, -hw)])
        return (lambda dy, dx: _polygon_mask(dy, dx, verts)), math.hypot(hh, hw)
    if shape == "triangle":
        ang = np.array([0, 2 * np.pi / 3, 4 * np.pi / 3]) + rng.uniform(-0.35, 0.35, 3)
        rad = rng.uniform(0.75, 1.25, 3)
        pts = np.stack([rad * np.sin(ang), rad * np.cos(ang)], axis=1)
        (y0, x0), (y1, x1), (y2, x2) = pts
        unit_area = abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)) / 2
        pts = pts * math.sqrt(area / unit_area)
        verts = rot(pts)
        return (lambda dy, dx: _polygon_mask(dy, dx, verts)), float(np.max(np.hypot(*pts.T)))
    if shape == "blob":
        amps = rng.uniform(0.0, 0.2, 2)
        phases = rng.uniform(0, 2 * np.pi, 2)
        r0 = math.sqrt(area / (math.pi * (1 + 0.5 * float(np.sum(amps**2)))))

        def blob(dy, dx):
            ang = np.arctan2(dy, dx)
            rr = r0 * (1 + amps[0] * np.sin(2 * ang + phases[0]) + amps[1] * np.sin(3 * ang + phases[1]))
            return dy**2 + dx**2 <= rr**2

        return blob, r0 * (1 + float(np.sum(amps)))
    if shape == "ring":
        r_out = math.sqrt(area / (0.75 * math.pi))
        return (lambda dy, dx: (dy**2 + dx**2 <= r_out**2) & (dy**2 + dx**2 >= (0.5 * r_out) ** 2)), r_out
    if shape == "cross":
        arm = math.sqrt(9 * area / 5) / 2
        bar = arm / 3
        def cross(dy, dx):
            u = dy * c + dx * s
            v = -dy * s + dx * c
            return ((np.abs(u) <= arm) & (np.abs(v) <= bar)) | ((np.abs(v) <= arm) & (np.abs(u) <= bar))
        return cross, math.hypot(arm, bar)
    raise ConfigError(f"unknown anomaly shape {shape!r}")


def _sample_area(domain: str, rng: np.random.Generator) -> float:
    lo, hi = AREA_RANGE[domain]
    if domain == "A":
        # log-uniform: broader spread of anomaly scales than V
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    return float(rng.uniform(lo, hi))


def _place_anomaly(spec: SceneSpec, domain: str, shapes, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    lo, hi = AREA_RANGE[domain]
    margin = VOID_RING_WIDTH + 1
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    for _ in range(MAX_PLACEMENT_TRIES):
        frac = _sample_area(domain, rng)
        shape = shapes[int(rng.integers(len(shapes)))]
        raster, radius = _shape_geometry(shape, frac * h * w, rng)
        span_y, span_x = h - 2 * (radius + margin), w - 2 * (radius + margin)
        if span_y <= 0 or span_x <= 0:
            continue
        cy = radius + margin + rng.uniform(0, span_y)
        cx = radius + margin + rng.uniform(0, span_x)
        mask = raster(yy - cy, xx - cx)
        actual = mask.mean()
        if lo <= actual <= hi:
            return mask
    raise GenerationError(
        f"could not place a {domain}-domain anomaly in a {h}x{w} frame after {MAX_PLACEMENT_TRIES} tries"
    )


def _ring(mask: np.ndarray, width: int) -> np.ndarray:
    if not mask.any():
        return np.zeros_like(mask)
    grown = ndimage.binary_dilation(mask, structure=np.ones((3, 3), bool), iterations=width)
    return grown & ~mask


def encode_gt(anomaly_mask: np.ndarray, ring_width: int = VOID_RING_WIDTH) -> np.ndarray:
    gt = np.zeros(anomaly_mask.shape, dtype=np.uint8)
    gt[_ring(anomaly_mask, ring_width)] = IGNORE_LABEL
    gt[anomaly_mask] = 1
    return gt


def palette_distance(color: np.ndarray, palette: np.ndarray) -> float:
    """Distance from ``color`` to the nearest palette colour, in palette units."""
    return float(np.min(np.linalg.norm(palette - np.asarray(color)[None, :], axis=1)) / PALETTE_UNIT)


def _anomaly_texture(domain, mask, semantic, palette, rng) -> np.ndarray:
    h, w = mask.shape
    noise = rng.normal(0.0, NOISE_STD, size=(h, w, 3))
    if domain == "V":
        under = np.bincount(semantic[mask], minlength=len(palette))
        choices = [c for c in range(len(palette)) if c != int(np.argmax(under))]
        jitter = rng.normal(size=3)
        jitter *= rng.uniform(0, 0.5) * PALETTE_UNIT / np.linalg.norm(jitter)
        color = palette[choices[int(rng.integers(len(choices)))]] + jitter
        return color + noise
    if domain == "A":
        color = np.array(colorsys.hsv_to_rgb(rng.uniform(), rng.uniform(0.8, 1.0), rng.uniform(0.85, 1.0)))
        period = rng.uniform(3.0, 8.0)
        ang = rng.uniform(0, np.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        stripes = 0.08 * np.sin(2 * np.pi * (yy * np.sin(ang) + xx * np.cos(ang)) / period)
        return color + stripes[..., None] + noise
    # S: moderately off-palette colour with scene-like texture
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    base = palette[int(rng.integers(len(palette)))]
    color = np.clip(base + direction * rng.uniform(3.0, 5.0) * PALETTE_UNIT, 0.05, 0.95)
    return color + noise


def make_reconstruction(image: np.ndarray, anomaly_mask: np.ndarray, semantic_map: np.ndarray, seed: int) -> np.ndarray:
    """In-paint the (dilated) anomaly region with background texture.

    Each in-painted pixel receives the mean colour of its semantic class,
    estimated from image pixels outside the dilated mask, plus a fresh
    noise realization. Outside the dilated mask the reconstruction is an
    exact copy of the image.
    """
    if image.shape[:2] != anomaly_mask.shape or anomaly_mask.shape != semantic_map.shape:
        raise ValueError(
            f"shape mismatch: image {image.shape}, mask {anomaly_mask.shape}, semantic {semantic_map.shape}"
        )
    recon = image.copy()
    if not anomaly_mask.any():
        return recon
    region = ndimage.binary_dilation(anomaly_mask, structure=np.ones((3, 3), bool), iterations=RECON_DILATION)
    keep = ~region
    fallback = image[keep].mean(axis=0) if keep.any() else np.full(3, 0.5)
    n_classes = int(semantic_map.max()) + 1
    colors = np.tile(fallback, (n_classes, 1))
    for c in range(n_classes):
        sel = keep & (semantic_map == c)
        if sel.any():
            colors[c] = image[sel].mean(axis=0)
    rng = np.random.default_rng([int(seed), 11])
    fill = colors[semantic_map[region]] + rng.normal(0.0, NOISE_STD, size=(int(region.sum()), 3))
    recon[region] = _quantize(fill)
    return recon


def make_uncertainty(gt_map: np.ndarray, noise_level: float = DEFAULT_UNCERTAINTY_NOISE, seed: int = 0) -> np.ndarray:
    """Toy uncertainty surrogate: a bump on anomaly boundaries plus noise."""
    if gt_map.ndim != 2:
        raise ValueError(f"gt_map must be 2-D, got shape {gt_map.shape}")
    if not 0.0 <= noise_level <= 0.5:
        raise ConfigError(f"noise_level must be in [0, 0.5], got {noise_level}")
    mask = gt_map == 1
    u = np.full(gt_map.shape, UNCERTAINTY_BASE)
    if mask.any() and not mask.all():
        d_in = ndimage.distance_transform_edt(mask)
        d_out = ndimage.distance_transform_edt(~mask)
        dist = np.where(mask, d_in, d_out) - 1.0
        u = u + UNCERTAINTY_PEAK * np.exp(-(dist**2) / (2 * UNCERTAINTY_SIGMA**2))
    if noise_level > 0:
        u = u + noise_level * np.random.default_rng([int(seed), 13]).normal(size=u.shape)
    return _quantize(u, 65535)


def boundary_band(mask: np.ndarray, width: int = 1) -> np.ndarray:
    """Pixels within ``width`` of the mask boundary, on either side."""
    if not mask.any():
        return np.zeros_like(mask)
    st = np.ones((3, 3), bool)
    outer = ndimage.binary_dilation(mask, st, iterations=width)
    inner = ndimage.binary_erosion(mask, st, iterations=width, border_value=0)
    return outer & ~inner


def synthesize(spec: SceneSpec, seed: int, domain: str, uncertainty_noise: float = DEFAULT_UNCERTAINTY_NOISE) -> Sample:
    if domain not in DOMAINS:
        raise ConfigError(f"domain must be one of {DOMAINS}, got {domain!r}")
    style = "shifted" if domain == "S" else "base"
    image, semantic = gen_scene(spec, seed, style)
    palette = scene_palette(spec, seed, style)
    rng = _rng(spec, seed, 1, _DOMAIN_CODE[domain])
    shapes = SHIFTED_SHAPES if domain == "S" else spec.anomaly_shape_set
    mask = _place_anomaly(spec, domain, shapes, rng)
    texture = _anomaly_texture(domain, mask, semantic, palette, rng)
    image = image.copy()
    image[mask] = _quantize(texture[mask])
    sub = int(rng.integers(0, 2**31))
    return Sample(
        image=image,
        semantic_map=semantic,
        recon_image=make_reconstruction(image, mask, semantic, sub),
        uncertainty_map=make_uncertainty(encode_gt(mask), uncertainty_noise, sub),
        gt_map=encode_gt(mask),
        domain=domain,
    )


def synth_voidclass(spec: SceneSpec, seed: int, **kw) -> Sample:
    return synthesize(spec, seed, "V", **kw)


def synth_anomalymix(spec: SceneSpec, seed: int, **kw) -> Sample:
    return synthesize(spec, seed, "A", **kw)


def synth_shifted(spec: SceneSpec, seed: int, **kw) -> Sample:
    return synthesize(spec, seed, "S", **kw)


def domain_seeds(seed: int, domain: str, count: int) -> list[int]:
    """Independent per-domain seed streams so V and A never share a scene."""
    ss = np.random.SeedSequence([int(seed), _DOMAIN_CODE[domain]])
    return [int(s) for s in ss.generate_state(count, dtype=np.uint32)]


def generate_dataset(spec: SceneSpec, count: int, seed: int, domains=("V", "A")) -> list[Sample]:
    samples = []
    for domain in domains:
        for j, s in enumerate(domain_seeds(seed, domain, count)):
            sample = synthesize(spec, s, domain)
            sample.sample_id = f"{domain}{j:05d}"
            samples.append(sample)
    return samples


# ---------------------------------------------------------------- disk format


def _save_png(arr: np.ndarray, path: Path) -> None:
    Image.fromarray(arr).save(path, format="PNG")


def write_dataset(samples, directory, spec: SceneSpec | None = None) -> DatasetManifest:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, seen = [], set()
    for idx, s in enumerate(samples):
        sid = s.sample_id or f"{s.domain}{idx:05d}"
        if sid in seen:
            raise DatasetError(f"duplicate sample id {sid!r}")
        seen.add(sid)
        sub = directory / sid
        sub.mkdir(exist_ok=True)
        _save_png(np.round(s.image * 255).astype(np.uint8), sub / FILES["image"])
        _save_png(np.round(s.recon_image * 255).astype(np.uint8), sub / FILES["recon"])
        _save_png(np.round(s.uncertainty_map * 65535).astype(np.uint16), sub / FILES["uncertainty"])
        _save_png(s.semantic_map.astype(np.uint8), sub / FILES["semantic"])
        _save_png(s.gt_map.astype(np.uint8), sub / FILES["gt"])
        entries.append({"id": sid, "domain": s.domain, "files": {k: f"{sid}/{v}" for k, v in FILES.items()}})
    manifest = DatasetManifest(samples=entries, spec=spec.to_dict() if spec else {})
    tmp = directory / (MANIFEST_NAME + ".tmp")
    tmp.write_text(json.dumps(manifest.to_json(), indent=2))
    os.replace(tmp, directory / MANIFEST_NAME)
    return manifest


def _load_png(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"missing dataset file: {path}")
    try:
        with Image.open(path) as im:
            return np.asarray(im).copy()
    except Exception as exc:  # PIL raises a zoo of types on corrupt files
        raise DatasetError(f"corrupt image file {path}: {exc}") from exc


def read_manifest(directory) -> DatasetManifest:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not directory.is_dir():
        raise DatasetError(f"dataset directory does not exist: {directory}")
    if not path.is_file():
        raise EmptyDatasetError(f"no {MANIFEST_NAME} in {directory}: empty dataset")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"corrupt manifest {path}: {exc}") from exc
    samples = raw.get("samples", [])
    if not samples:
        raise EmptyDatasetError(f"manifest {path} lists no samples")
    ids = [e["id"] for e in samples]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"manifest {path} has duplicate sample ids")
    return DatasetManifest(
        samples=samples,
        spec=raw.get("spec", {}),
        generator_version=raw.get("generator_version", ""),
        encodings=raw.get("encodings", {}),
    )


def read_dataset(directory) -> list[Sample]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    out = []
    for entry in manifest.samples:
        files = {k: directory / v for k, v in entry["files"].items()}
        gt = _load_png(files["gt"])
        bad = np.setdiff1d(np.unique(gt), [0, 1, IGNORE_LABEL])
        if gt.ndim != 2 or bad.size:
            raise DatasetError(f"invalid gt values {bad.tolist()} in {files['gt']}")
        unc = _load_png(files["uncertainty"])
        if unc.dtype != np.uint16:
            raise DatasetError(f"expected 16-bit uncertainty map in {files['uncertainty']}, got {unc.dtype}")
        out.append(
            Sample(
                image=_load_png(files["image"]).astype(np.float64) / 255,
                semantic_map=_load_png(files["semantic"]).astype(np.uint8),
                recon_image=_load_png(files["recon"]).astype(np.float64) / 255,
                uncertainty_map=unc.astype(np.float64) / 65535,
                gt_map=gt.astype(np.uint8),
                domain=entry["domain"],
                sample_id=entry["id"],
            )
        )
    return out
