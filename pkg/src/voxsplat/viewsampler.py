"""Camera-rig generation and per-scene view-count selection.

Rigs are built from subdivided-icosahedron vertices (12, 42, 162, ...
directions) looking at a common center; a 92-direction rig augments the
42-vertex icosphere with Fibonacci-lattice directions.  The number of
views a scene deserves is picked from the entropy of an initial low-count
render set: busier scenes get more views.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, OutOfRange
from .gaussians import Camera
from ._mathutil import normalize_rows

HISTOGRAM_BINS = 256
LUMINANCE_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])  # Rec. 709

VIEW_COUNT_LOW = 42
VIEW_COUNT_MID = 92
VIEW_COUNT_HIGH = 162


def icosphere_vertices(level):
    """Unit vertices of an icosahedron subdivided ``level`` times.

    Each subdivision splits every triangle into four and reprojects the
    midpoints onto the sphere, giving 10 * 4**level + 2 vertices.
    """
    if level < 0:
        raise OutOfRange("subdivision level must be >= 0")
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    verts = [tuple(np.array(p, dtype=np.float64) / np.linalg.norm(p)) for p in verts]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]

    for _ in range(level):
        midpoint_cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint_cache:
                m = np.array(verts[i]) + np.array(verts[j])
                m /= np.linalg.norm(m)
                midpoint_cache[key] = len(verts)
                verts.append(tuple(m))
            return midpoint_cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    return np.array(verts, dtype=np.float64)


def fibonacci_sphere(n):
    """n near-uniform unit directions from a Fibonacci lattice."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    theta = np.pi * (3.0 - np.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=-1)


def hybrid_92_directions():
    """42-vertex icosphere plus 50 Fibonacci directions (deduplicated)."""
    base = icosphere_vertices(1)
    chosen = []
    n = 50
    while len(chosen) < 50:
        chosen = []
        for d in fibonacci_sphere(n):
            ref = np.concatenate([base, np.array(chosen).reshape(-1, 3)], axis=0)
            if np.arccos(np.clip(ref @ d, -1, 1)).min() > 1e-6:
                chosen.append(d)
            if len(chosen) == 50:
                break
        n += 10
    return np.concatenate([base, np.array(chosen)], axis=0)


def cameras_from_directions(dirs, radius, center, fov_y, width, height):
    """One look-at-center camera per unit direction, at the given radius."""
    center = np.asarray(center, dtype=np.float64)
    return [
        Camera.look_at(center + radius * d, center, fov_y, width, height)
        for d in normalize_rows(np.asarray(dirs, dtype=np.float64))
    ]


def icosphere_cameras(level, radius, center=(0.0, 0.0, 0.0), fov_y=0.8, width=128, height=128):
    """Cameras on the vertices of a level-subdivided icosphere."""
    return cameras_from_directions(
        icosphere_vertices(level), radius, center, fov_y, width, height
    )


def camera_rig(count, radius, center=(0.0, 0.0, 0.0), fov_y=0.8, width=128, height=128):
    """Standard rigs by view count: 12, 42, 92 (hybrid), or 162."""
    if count == 12:
        dirs = icosphere_vertices(0)
    elif count == 42:
        dirs = icosphere_vertices(1)
    elif count == VIEW_COUNT_MID:
        dirs = hybrid_92_directions()
    elif count == VIEW_COUNT_HIGH:
        dirs = icosphere_vertices(2)
    else:
        raise OutOfRange(f"no standard rig with {count} views (use 12/42/92/162)")
    return cameras_from_directions(dirs, radius, center, fov_y, width, height)


def entropy_score(images):
    """Scene busyness from initial renders.

    Bins the luminance and alpha of every pixel of every image into 256
    bins each and sums, over all pixels, the log-probability of the
    pixel's luminance bin plus that of its alpha bin (negated).  Constant
    images score 0; scenes with richer value distributions score higher.
    """
    if len(images) == 0:
        raise EmptyInput("entropy_score needs at least one image")
    lum_parts, alpha_parts = [], []
    for img in images:
        img = np.asarray(img, dtype=np.float64)
        lum_parts.append((img[..., :3] @ LUMINANCE_WEIGHTS).reshape(-1))
        alpha_parts.append(img[..., 3].reshape(-1))
    lum = np.concatenate(lum_parts)
    alpha = np.concatenate(alpha_parts)

    total = 0.0
    for channel in (lum, alpha):
        bins = np.minimum(
            (np.clip(channel, 0.0, 1.0) * HISTOGRAM_BINS).astype(np.int64),
            HISTOGRAM_BINS - 1,
        )
        counts = np.bincount(bins, minlength=HISTOGRAM_BINS)
        p = counts / channel.size
        # each pixel contributes p_bin(pixel) * log p_bin(pixel)
        total -= float(np.sum(counts * np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)))
    return total


def views_for_scene(normalized_score):
    """Assigned view count from a normalized entropy score in [0, 1]."""
    s = float(normalized_score)
    if not 0.0 <= s <= 1.0:
        raise OutOfRange(f"normalized entropy score {s} outside [0, 1]")
    if s < 0.1:
        return VIEW_COUNT_LOW
    if s <= 0.5:
        return VIEW_COUNT_MID
    return VIEW_COUNT_HIGH


@dataclass
class EntropyReport:
    """Raw and normalized entropy per basic scene, with chosen view counts."""

    raw: np.ndarray
    normalized: np.ndarray
    view_counts: list

    @classmethod
    def from_image_sets(cls, image_sets):
        if len(image_sets) == 0:
            raise EmptyInput("need at least one basic scene")
        raw = np.array([entropy_score(images) for images in image_sets])
        peak = raw.max()
        normalized = raw / peak if peak > 0 else np.zeros_like(raw)
        counts = [views_for_scene(s) for s in normalized]
        return cls(raw, normalized, counts)
