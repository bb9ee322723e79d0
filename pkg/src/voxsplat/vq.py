"""Vector-quantization compression of editable splat models.

Every compressible attribute gets one shared scalar codebook built with
k-means; vector attributes store one index per component.  Positions and
normals are kept exact, since quantizing them visibly degrades geometry.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CorruptIndex, EmptyInput, OutOfRange

DEFAULT_CODEBOOK_SIZE = 256
KMEANS_MAX_ITERS = 50
KMEANS_SHIFT_TOL = 1e-6

# attribute name -> owning sub-structure; order fixed for serialization
QUANTIZED_ATTRIBUTES = (
    ("q_raw", "geometry"),
    ("log_s", "geometry"),
    ("o_logit", "geometry"),
    ("delta_c", "shading"),
    ("k_a_raw", "shading"),
    ("k_d_raw", "shading"),
    ("k_s_raw", "shading"),
    ("log_beta", "shading"),
)


def kmeans(samples, k, seed=0, restarts=5):
    """Scalar k-means: seeded k-means++ restarts plus Lloyd iterations.

    Each restart stops after 50 iterations or when the largest relative
    centroid shift drops below 1e-6; the lowest-SSE restart wins.  If the
    input has at most ``k`` distinct values the distinct values themselves
    are returned.  Centroids come back sorted.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size == 0:
        raise EmptyInput("kmeans needs at least one sample")
    if k < 1:
        raise OutOfRange("codebook size must be >= 1")
    distinct = np.unique(samples)
    if distinct.size <= k:
        return distinct

    rng = np.random.default_rng(seed)
    best = None
    best_sse = np.inf
    for _ in range(restarts):
        centroids = _lloyd(samples, _seed_plusplus(samples, k, rng))
        idx = assign_nearest(samples, centroids)
        sse = float(np.sum((samples - centroids[idx]) ** 2))
        if sse < best_sse:
            best, best_sse = centroids, sse
    return np.unique(best)


def _seed_plusplus(samples, k, rng):
    """k-means++ initial centroids."""
    centroids = np.empty(k)
    centroids[0] = samples[rng.integers(samples.size)]
    d2 = (samples - centroids[0]) ** 2
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[i:] = centroids[0]
            break
        centroids[i] = samples[rng.choice(samples.size, p=d2 / total)]
        d2 = np.minimum(d2, (samples - centroids[i]) ** 2)
    return centroids


def _lloyd(samples, centroids):
    scale = max(float(np.abs(samples).max()), 1e-12)
    for _ in range(KMEANS_MAX_ITERS):
        centroids = np.sort(centroids)
        idx = assign_nearest(samples, centroids)
        sums = np.bincount(idx, weights=samples, minlength=centroids.size)
        counts = np.bincount(idx, minlength=centroids.size)
        new = np.where(counts > 0, sums / np.maximum(counts, 1), centroids)
        shift = np.abs(new - centroids).max() / scale
        centroids = new
        if shift < KMEANS_SHIFT_TOL:
            break
    return np.sort(centroids)


def assign_nearest(values, centroids):
    """Index of the nearest centroid for each value (centroids sorted)."""
    values = np.asarray(values, dtype=np.float64)
    if centroids.size == 1:
        return np.zeros(values.shape, dtype=np.int64)
    mids = 0.5 * (centroids[1:] + centroids[:-1])
    return np.searchsorted(mids, values)


def _index_dtype(k):
    return np.uint8 if k <= 256 else np.uint16


@dataclass
class Codebook:
    """Sorted scalar centroids for one attribute, shared across components."""

    name: str
    centroids: np.ndarray

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64).reshape(-1)
        if self.centroids.size < 1:
            raise EmptyInput(f"codebook {self.name!r} is empty")
        if np.any(np.diff(self.centroids) < 0):
            raise OutOfRange(f"codebook {self.name!r} centroids must be sorted")

    @property
    def k(self):
        return self.centroids.size

    @property
    def index_dtype(self):
        return _index_dtype(self.k)

    def encode(self, values):
        return assign_nearest(values, self.centroids).astype(self.index_dtype)

    def decode(self, indices):
        indices = np.asarray(indices)
        if indices.size and int(indices.max()) >= self.k:
            raise CorruptIndex(
                f"codebook {self.name!r}: index {int(indices.max())} >= K={self.k}"
            )
        return self.centroids[indices.astype(np.int64)]


def quantize_attributes(arrays, k=DEFAULT_CODEBOOK_SIZE, seed=0):
    """Build one codebook per named array; returns {name: (Codebook, indices)}.

    Indices keep the shape of the source array (per-component for vectors).
    """
    out = {}
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        cb = Codebook(name, kmeans(arr.reshape(-1), k, seed=seed))
        out[name] = (cb, cb.encode(arr))
    return out


def quantize_model(model, k=DEFAULT_CODEBOOK_SIZE, seed=0):
    """Replace the compressible attributes of an editable model with
    codebooks and indices; positions, normals, and the palette stay exact."""
    from .scene import BasicSceneModel, STAGE_EDITABLE

    if model.stage != STAGE_EDITABLE:
        raise OutOfRange("only editable-stage models are quantized")
    if model.quantized is not None:
        return model.copy()
    arrays = {
        name: np.asarray(getattr(getattr(model, owner), name))
        for name, owner in QUANTIZED_ATTRIBUTES
    }
    quant = quantize_attributes(arrays, k=k, seed=seed)
    geom = model.geometry.copy()
    # dequantized views keep renders reproducible from the stored indices
    geom.q_raw = quant["q_raw"][0].decode(quant["q_raw"][1])
    geom.log_s = quant["log_s"][0].decode(quant["log_s"][1])
    geom.o_logit = quant["o_logit"][0].decode(quant["o_logit"][1])
    return BasicSceneModel(
        stage=STAGE_EDITABLE,
        geometry=geom,
        shading=None,
        palette=model.palette.copy(),
        quantized=quant,
        metadata=dict(model.metadata),
    )


def dequantize_model(model):
    """Materialize a plain editable model from a quantized one."""
    from .scene import BasicSceneModel, STAGE_EDITABLE
    from .shading import ShadingAttributes

    if model.quantized is None:
        return model.copy()
    q = model.quantized

    def dec(name):
        cb, idx = q[name]
        return cb.decode(idx)

    geom = model.geometry.copy()
    geom.q_raw = dec("q_raw")
    geom.log_s = dec("log_s")
    geom.o_logit = dec("o_logit")
    shading = ShadingAttributes(
        delta_c=dec("delta_c"),
        k_a_raw=dec("k_a_raw"),
        k_d_raw=dec("k_d_raw"),
        k_s_raw=dec("k_s_raw"),
        log_beta=dec("log_beta"),
    )
    return BasicSceneModel(
        stage=STAGE_EDITABLE,
        geometry=geom,
        shading=shading,
        palette=model.palette.copy(),
        quantized=None,
        metadata=dict(model.metadata),
    )
