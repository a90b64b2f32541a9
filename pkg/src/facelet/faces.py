"""Procedural portrait generator with known attribute regions.

Every sample is an ellipse face with eyes, a mouth arc whose curvature
encodes "smile", an optional dark mustache rectangle, and an optional global
brightness lift. Region boxes are recorded for all attributes (where the
feature lives, or would live), so pixel statistics inside them are usable for
both true and false samples. Generation is deterministic per (seed, index)
and samples are aligned to a canonical pose; misalignment probes are created
explicitly via jittered_copy.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pngio import load_png, save_png
from .tensor import Tensor

ATTRIBUTES = ("mustache", "smile", "bright")
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass
class Box:
    """Axis-aligned pixel box: x,y is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def shifted(self, dx: int, dy: int) -> "Box":
        return Box(self.x + dx, self.y + dy, self.w, self.h)

    def inside(self, size: int) -> bool:
        return 0 <= self.x and 0 <= self.y and self.x + self.w <= size and self.y + self.h <= size

    def as_list(self) -> list:
        return [self.x, self.y, self.w, self.h]


@dataclass
class Jitter:
    dx: int = 0
    dy: int = 0
    applied: bool = False


@dataclass
class SyntheticPortrait:
    image: Tensor                      # (3,S,S) in [0,1], quantized to the PNG grid
    attributes: dict
    regions: dict                      # attribute -> Box (present for all attributes)
    jitter: Jitter
    sample_id: str

    @property
    def size(self) -> int:
        return self.image.shape[-1]


def _draw_sample(rng: np.random.Generator, size: int, attrs: dict) -> tuple:
    """Render one portrait; returns (float image (3,S,S), regions dict)."""
    s = float(size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)

    cx = s * (0.5 + rng.uniform(-0.05, 0.05))
    cy = s * (0.5 + rng.uniform(-0.05, 0.05))
    scale_f = rng.uniform(0.9, 1.1)
    ax = s * 0.30 * scale_f
    ay = s * 0.38 * scale_f

    img = np.empty((3, size, size), dtype=np.float32)
    bg = 0.10 + 0.05 * rng.random(3).astype(np.float32)
    img[:] = bg[:, None, None]

    # wide-jaw cosmetic marker, deliberately correlated with mustache
    wide_jaw = bool(rng.random() < (0.8 if attrs["mustache"] else 0.2))
    ax_map = np.where(yy > cy, ax * (1.25 if wide_jaw else 1.0), ax)

    base = 0.50 + 0.30 * rng.random()
    skin = np.array([base, base * 0.82, base * 0.68], dtype=np.float32)
    d_face = np.sqrt(((xx - cx) / ax_map) ** 2 + ((yy - cy) / ay) ** 2)
    face_alpha = np.clip(2.0 * (1.0 - d_face), 0.0, 1.0)
    img += face_alpha[None] * (skin[:, None, None] - img)

    eye_color = np.array([0.08, 0.07, 0.06], dtype=np.float32)
    for side in (-1.0, 1.0):
        ex, ey = cx + side * 0.45 * ax, cy - 0.30 * ay
        d_eye = np.sqrt(((xx - ex) / (0.16 * ax)) ** 2 + ((yy - ey) / (0.10 * ay)) ** 2)
        a = np.clip(2.0 * (1.0 - d_eye), 0.0, 1.0)
        img += a[None] * (eye_color[:, None, None] - img)

    # mouth arc: smiles bow downward in the middle (corners up in image coords)
    mw = 0.55 * ax
    my = cy + 0.45 * ay
    curve = (0.22 if attrs["smile"] else 0.03) * ay
    thick = max(1.2, 0.045 * s)
    t = (xx - cx) / mw
    arc_y = my + curve * (t * t - 0.5)
    mouth_mask = (np.abs(yy - arc_y) < thick) & (np.abs(t) < 1.0)
    mouth_color = np.array([0.45, 0.12, 0.12], dtype=np.float32)
    img = np.where(mouth_mask[None], mouth_color[:, None, None]
                   + 0.0 * img, img)
    mouth_box = Box(int(np.floor(cx - mw)), int(np.floor(my - curve * 0.5 - thick - 1)),
                    int(np.ceil(2 * mw)), int(np.ceil(curve + 2 * thick + 2)))

    # mustache band sits between nose and mouth
    mu_w = 0.80 * mw
    mu_top = my - 0.26 * ay
    mu_bot = my - 0.08 * ay
    mu_box = Box(int(np.floor(cx - mu_w)), int(np.floor(mu_top)),
                 int(np.ceil(2 * mu_w)), int(np.ceil(mu_bot - mu_top)))
    if attrs["mustache"]:
        shade = 0.10 + 0.06 * rng.random()
        mu_mask = (np.abs(xx - cx) < mu_w) & (yy >= mu_top) & (yy < mu_bot)
        mu_color = np.array([shade, shade * 0.8, shade * 0.6], dtype=np.float32)
        img = np.where(mu_mask[None], mu_color[:, None, None] + 0.0 * img, img)

    face_box = Box(int(np.floor(cx - 1.25 * ax)), int(np.floor(cy - ay)),
                   int(np.ceil(2.5 * ax)), int(np.ceil(2 * ay)))
    if attrs["bright"]:
        img = img + 0.12

    regions = {"mustache": mu_box, "smile": mouth_box, "bright": face_box}
    return np.clip(img, 0.0, 1.0), regions


def _quantize(img: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so in-memory and PNG round-trip images agree."""
    return (np.round(img * 255.0) / 255.0).astype(np.float32)


def generate_portraits(seed: int, count: int, size: int, attribute_spec: dict) -> list:
    """Deterministic batch of portraits; spec maps attribute -> P(true)."""
    if size not in (32, 64):
        raise ValueError(f"size must be 32 or 64, got {size}")
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    spec = {a: float(attribute_spec.get(a, 0.5)) for a in ATTRIBUTES}
    children = np.random.SeedSequence(seed).spawn(count)
    portraits = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        attrs = {a: bool(rng.random() < spec[a]) for a in ATTRIBUTES}
        img, regions = _draw_sample(rng, size, attrs)
        portraits.append(SyntheticPortrait(
            image=Tensor(_quantize(img)), attributes=attrs, regions=regions,
            jitter=Jitter(), sample_id=f"s{i:05d}"))
    return portraits


def jittered_copy(portrait: SyntheticPortrait, dx: int, dy: int) -> SyntheticPortrait:
    """Rigid translate of image and boxes; zero-fill at the borders."""
    size = portrait.size
    if abs(dx) > size // 8 or abs(dy) > size // 8:
        raise ValueError(f"jitter ({dx},{dy}) exceeds +-{size // 8}")
    moved = {}
    for attr, box in portrait.regions.items():
        nb = box.shifted(dx, dy)
        if not nb.inside(size):
            raise ValueError(f"jitter would push {attr} region outside the image")
        moved[attr] = nb
    img = portrait.image.data
    out = np.zeros_like(img)
    src_x = slice(max(0, -dx), min(size, size - dx))
    src_y = slice(max(0, -dy), min(size, size - dy))
    dst_x = slice(max(0, dx), min(size, size + dx))
    dst_y = slice(max(0, dy), min(size, size + dy))
    out[:, dst_y, dst_x] = img[:, src_y, src_x]
    return SyntheticPortrait(image=Tensor(out), attributes=dict(portrait.attributes),
                             regions=moved, jitter=Jitter(dx, dy, True),
                             sample_id=portrait.sample_id)


# ---------------------------------------------------------------------------
# dataset directory + manifest
# ---------------------------------------------------------------------------

def generate(seed: int, count: int, size: int, attribute_spec: dict, out_dir) -> dict:
    """Write PNGs plus manifest.json; returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    portraits = generate_portraits(seed, count, size, attribute_spec)
    entries = []
    counts = {a: 0 for a in ATTRIBUTES}
    for p in portraits:
        fname = f"{p.sample_id}.png"
        save_png(p.image.data, out / fname)
        for a in ATTRIBUTES:
            counts[a] += int(p.attributes[a])
        entries.append({
            "file": fname,
            "sample_id": p.sample_id,
            "attributes": p.attributes,
            "regions": {a: b.as_list() for a, b in p.regions.items()},
            "jitter": {"dx": p.jitter.dx, "dy": p.jitter.dy, "applied": p.jitter.applied},
        })
    manifest = {
        "version": MANIFEST_VERSION,
        "image_size": size,
        "generator_seed": seed,
        "attribute_spec": {a: float(attribute_spec.get(a, 0.5)) for a in ATTRIBUTES},
        "attribute_counts": counts,
        "entries": entries,
    }
    with open(out / MANIFEST_NAME, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


class ManifestError(ValueError):
    """Manifest/files mismatch or invariant violation."""


def load_dataset(data_dir) -> list:
    """Load portraits from a generated directory, validating every invariant."""
    root = Path(data_dir)
    with open(root / MANIFEST_NAME, encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {manifest.get('version')}")
    size = manifest["image_size"]
    portraits = []
    seen = set()
    for e in manifest["entries"]:
        path = root / e["file"]
        if not path.exists():
            raise ManifestError(f"missing image file {e['file']}")
        img = load_png(path)
        if img.shape != (3, size, size):
            raise ManifestError(f"{e['file']}: expected (3,{size},{size}), got {img.shape}")
        if e["sample_id"] in seen:
            raise ManifestError(f"duplicate sample_id {e['sample_id']}")
        seen.add(e["sample_id"])
        regions = {a: Box(*v) for a, v in e["regions"].items()}
        for a, flag in e["attributes"].items():
            if flag:
                if a not in regions:
                    raise ManifestError(f"{e['sample_id']}: true attribute {a} has no region")
                if not regions[a].inside(size):
                    raise ManifestError(f"{e['sample_id']}: region {a} leaves the image")
        jit = Jitter(**e["jitter"])
        if jit.applied:
            raise ManifestError(f"{e['sample_id']}: training-domain images must be unjittered")
        portraits.append(SyntheticPortrait(image=Tensor(img), attributes=e["attributes"],
                                           regions=regions, jitter=jit,
                                           sample_id=e["sample_id"]))
    return portraits


def is_train(sample_id: str) -> bool:
    """90/10 split keyed by a hash of the sample id."""
    digest = hashlib.sha256(sample_id.encode()).digest()
    return digest[0] % 10 != 0


def split_dataset(portraits) -> tuple:
    train = [p for p in portraits if is_train(p.sample_id)]
    held = [p for p in portraits if not is_train(p.sample_id)]
    return train, held


def images_array(portraits) -> np.ndarray:
    return np.stack([p.image.data for p in portraits])
