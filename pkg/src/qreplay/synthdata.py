"""Synthetic 28x28 digit-style corpus written in IDX format.

Offline stand-in for environments without the real handwritten-digit
files: ten visually distinct glyph classes rendered onto 28x28 canvases
with random shifts, intensity jitter, and pixel noise. The output goes
through the exact same IDX parsing, downsampling, and permutation
machinery as the real corpus. Generation is fully deterministic per seed.
"""

import os

import numpy as np

from .streams import write_idx_images, write_idx_labels

IMAGES_NAME = "train-images-idx3-ubyte"
LABELS_NAME = "train-labels-idx1-ubyte"


def _glyph_templates():
    """Ten 28x28 binary glyphs built from simple geometric strokes."""
    yy, xx = np.mgrid[0:28, 0:28]
    cy, cx = 13.5, 13.5
    r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    templates = []
    templates.append(((r > 6.0) & (r < 9.5)).astype(float))            # ring
    templates.append(((np.abs(xx - cx) < 2.0) & (r < 11)).astype(float))  # vertical bar
    templates.append(((np.abs(yy - cy) < 2.0) & (r < 11)).astype(float))  # horizontal bar
    templates.append(((np.abs(yy - xx) < 2.5) & (r < 12)).astype(float))  # main diagonal
    templates.append(((np.abs(yy + xx - 27) < 2.5) & (r < 12)).astype(float))  # anti-diagonal
    templates.append((r < 5.5).astype(float))                           # filled disc
    cross = ((np.abs(xx - cx) < 1.8) | (np.abs(yy - cy) < 1.8)) & (r < 10)
    templates.append(cross.astype(float))                               # plus
    ex = ((np.abs(yy - xx) < 2.0) | (np.abs(yy + xx - 27) < 2.0)) & (r < 10)
    templates.append(ex.astype(float))                                  # X
    two_h = ((np.abs(yy - 9) < 1.8) | (np.abs(yy - 18) < 1.8)) & (np.abs(xx - cx) < 9)
    templates.append(two_h.astype(float))                               # two horizontal bars
    two_v = ((np.abs(xx - 9) < 1.8) | (np.abs(xx - 18) < 1.8)) & (np.abs(yy - cy) < 9)
    templates.append(two_v.astype(float))                               # two vertical bars
    return np.stack(templates)


def render_corpus(n_images=60_000, seed=12345, noise_sigma=0.12, max_shift=2):
    """(images uint8 (n, 28, 28), labels uint8 (n,)) with shift/jitter/noise."""
    rng = np.random.default_rng(seed)
    templates = _glyph_templates()
    labels = rng.integers(0, 10, size=n_images).astype(np.uint8)
    shifts = rng.integers(-max_shift, max_shift + 1, size=(n_images, 2))
    intensity = rng.uniform(0.7, 1.0, size=n_images)
    images = np.empty((n_images, 28, 28), dtype=np.uint8)
    chunk = 2000
    for start in range(0, n_images, chunk):
        end = min(start + chunk, n_images)
        block = templates[labels[start:end]] * intensity[start:end, None, None]
        for i in range(end - start):
            dy, dx = shifts[start + i]
            block[i] = np.roll(np.roll(block[i], dy, axis=0), dx, axis=1)
        block += rng.normal(0.0, noise_sigma, size=block.shape)
        np.clip(block, 0.0, 1.0, out=block)
        images[start:end] = np.round(block * 255.0).astype(np.uint8)
    return images, labels


def make_synthetic_corpus(out_dir, n_images=60_000, seed=12345):
    """Render the corpus and write IDX files; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    images_path = os.path.join(out_dir, IMAGES_NAME)
    labels_path = os.path.join(out_dir, LABELS_NAME)
    images, labels = render_corpus(n_images=n_images, seed=seed)
    write_idx_images(images_path, images)
    write_idx_labels(labels_path, labels)
    return images_path, labels_path
