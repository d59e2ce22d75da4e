"""Deterministic synthetic scenes for training and acceptance testing.

Each dataset has one rigid object class (a notched disc or a cut rounded
square) rendered at fixed scale with a fixed texture, pasted at random
positions over cluttered low-contrast backgrounds.  Masks are exact by
construction.  Everything derives from the dataset seed, so a (seed, n)
pair always produces byte-identical files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .imageops import save_image, save_mask

MANIFEST_VERSION = 1
SHAPES = ("disc", "square")


def _disc_mask(radius: int = 17) -> np.ndarray:
    d = 2 * radius + 1
    yy, xx = np.mgrid[0:d, 0:d] - radius
    r = np.hypot(xx, yy)
    mask = r <= radius
    # wedge notch off the right edge makes the outline asymmetric
    ang = np.arctan2(yy, xx)
    mask &= ~((ang > -0.35) & (ang < 0.45) & (r > 0.45 * radius))
    return mask


def _square_mask(side: int = 33, corner: int = 7) -> np.ndarray:
    half = side // 2
    yy, xx = np.mgrid[0:side, 0:side] - half
    # rounded box: distance to the shrunken core box
    qx = np.maximum(np.abs(xx) - (half - corner), 0)
    qy = np.maximum(np.abs(yy) - (half - corner), 0)
    mask = np.hypot(qx, qy) <= corner
    # bite one corner so orientation is unambiguous
    mask &= ~((xx > half - 11) & (yy > half - 9))
    return mask


def object_mask(shape: str) -> np.ndarray:
    if shape == "disc":
        return _disc_mask()
    if shape == "square":
        return _square_mask()
    raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")


def object_texture(shape: str, seed: int) -> np.ndarray:
    """Fixed RGB texture for the whole dataset; the object is rigid."""
    mask = object_mask(shape)
    rng = np.random.default_rng([seed, 1_000_003])
    base = rng.uniform(0.55, 0.95, mask.shape)
    tex = np.stack([base, base * 0.82, base * 0.64], axis=-1)
    return (tex * 255).astype(np.uint8)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-contrast gray clutter: smooth noise plus a few soft blobs."""
    from .imageops import blur_raw

    field = rng.uniform(0.25, 0.50, (size, size))
    field = blur_raw(field, 1.5)
    for _ in range(rng.integers(3, 6)):
        bh = int(rng.integers(8, 22))
        bw = int(rng.integers(8, 22))
        y = int(rng.integers(0, size - bh))
        x = int(rng.integers(0, size - bw))
        patch = np.full((bh, bw), rng.uniform(0.15, 0.60))
        field[y : y + bh, x : x + bw] = 0.6 * field[y : y + bh, x : x + bw] + 0.4 * patch
    field = blur_raw(field, 1.0)
    field += rng.normal(0.0, 0.015, field.shape)
    field = np.clip(field, 0.0, 1.0)
    return (np.stack([field] * 3, axis=-1) * 255).astype(np.uint8)


@dataclass(frozen=True)
class SceneRecord:
    image: np.ndarray
    mask: np.ndarray
    cx: float
    cy: float
    bbox: tuple[int, int, int, int]


def generate_scene(
    shape: str, seed: int, index: int, size: int = 96, margin: int = 4
) -> SceneRecord:
    """One deterministic scene: object pasted at a random admissible position."""
    omask = object_mask(shape)
    otex = object_texture(shape, seed)
    d = omask.shape[0]
    if size < d + 2 * margin:
        raise ValueError(f"image size {size} too small for object of side {d}")
    rng = np.random.default_rng([seed, index])
    img = _background(rng, size)
    x0 = int(rng.integers(margin, size - d - margin + 1))
    y0 = int(rng.integers(margin, size - d - margin + 1))
    gain = rng.uniform(0.96, 1.04)
    patch = np.clip(otex.astype(np.float64) * gain, 0, 255).astype(np.uint8)
    region = img[y0 : y0 + d, x0 : x0 + d]
    region[omask] = patch[omask]
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[y0 : y0 + d, x0 : x0 + d] = omask
    ys, xs = np.nonzero(mask)
    bx0, bx1 = int(xs.min()), int(xs.max())
    by0, by1 = int(ys.min()), int(ys.max())
    return SceneRecord(
        image=img,
        mask=mask,
        cx=(bx0 + bx1) / 2.0,
        cy=(by0 + by1) / 2.0,
        bbox=(bx0, by0, bx1 - bx0 + 1, by1 - by0 + 1),
    )


def generate_dataset(
    out_dir: str,
    n_images: int,
    seed: int = 0,
    shape: str = "disc",
    size: int = 96,
) -> dict:
    """Write images/, masks/, and manifest.json; returns the manifest."""
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    omask = object_mask(shape)
    entries = []
    for i in range(n_images):
        rec = generate_scene(shape, seed, i, size=size)
        name = f"img_{i:04d}.png"
        save_image(rec.image, os.path.join(out_dir, "images", name))
        save_mask(rec.mask, os.path.join(out_dir, "masks", name))
        entries.append(
            {
                "image": f"images/{name}",
                "mask": f"masks/{name}",
                "cx": rec.cx,
                "cy": rec.cy,
                "bbox": list(rec.bbox),
            }
        )
    manifest = {
        "format_version": MANIFEST_VERSION,
        "seed": seed,
        "shape": shape,
        "size": size,
        "n_images": n_images,
        "object": {"width": int(omask.shape[1]), "height": int(omask.shape[0])},
        "images": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest
