"""Two-stage splat optimization.

Stage 1 fits base splats (spherical-harmonics color plus a learned normal
per primitive) to the multi-view dataset; stage 2 re-fits the same
geometry with editable reflection attributes on a frozen palette color.
Both stages use Adam, one random training view per iteration, and
periodic clone/split densification with low-opacity pruning.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ._mathutil import inv_sigmoid, normalize_rows, sigmoid
from .errors import DatasetEmpty, DivergedLoss, OutOfRange
from .gaussians import (
    GaussianGeometry,
    ShColor,
    eval_sh,
    eval_sh_backward,
    quat_to_rot,
    view_dirs,
    view_dirs_backward,
)
from .losses import (
    LossWeights,
    bilateral_smoothness,
    normal_consistency_loss,
    offset_sparsity_loss,
    opacity_l1_loss,
    photometric_loss,
    pseudo_normal_from_depth,
)
from .metrics import psnr
from .rasterizer import rasterize_forward, rasterize_backward
from .scene import STAGE_BASE, STAGE_EDITABLE, BasicSceneModel
from .shading import LightConfig, Palette, ShadingAttributes, shade_backward, shade_gaussians


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    """Hyperparameters shared by both training stages."""

    stage1_iters: int = 30000
    stage2_iters: int = 10000
    adam_eps: float = 1e-15
    adam_betas: tuple = (0.9, 0.999)
    # per-attribute learning rates (position decays exponentially)
    lr_mu: float = 1.6e-4
    lr_mu_final: float = 1.6e-6
    lr_q: float = 1e-3
    lr_log_s: float = 5e-3
    lr_o: float = 0.05
    lr_sh: float = 2.5e-3
    lr_normal: float = 0.01
    lr_shading: float = 0.01
    # late-training stabilizer: shading/normal rates decay to this fraction
    lr_decay_floor: float = 0.1
    # adaptive density control
    densify_interval: int = 100
    densify_start_iter: int = 500
    densify_until_iter: int = None  # defaults to half the stage's iterations
    densify_grad_threshold: float = 2e-4
    prune_opacity_threshold: float = 0.005
    max_primitives: int = 120000
    # initialization
    init_count: int = 5000
    init_opacity: float = 0.1
    sh_degree: int = 2
    silhouette_carve: bool = False
    # bookkeeping
    seed: int = 0
    log_interval: int = 50
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise OutOfRange("iteration counts must be >= 0")
        for name in ("densify_grad_threshold", "prune_opacity_threshold",
                     "densify_interval", "init_count", "max_primitives"):
            if getattr(self, name) <= 0:
                raise OutOfRange(f"{name} must be > 0")

    def until_iter(self, stage_iters):
        if self.densify_until_iter is not None:
            return self.densify_until_iter
        return stage_iters // 2


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Per-parameter Adam with first/second-moment state that survives
    densification (new rows start at zero moment)."""

    def __init__(self, eps=1e-15, betas=(0.9, 0.999)):
        self.eps = eps
        self.b1, self.b2 = betas
        self.state = {}

    def step(self, name, param, grad, lr):
        """Update ``param`` in place; a zero gradient leaves it unchanged."""
        st = self.state.setdefault(
            name, {"m": np.zeros_like(param), "v": np.zeros_like(param), "t": 0}
        )
        st["t"] += 1
        st["m"] = self.b1 * st["m"] + (1.0 - self.b1) * grad
        st["v"] = self.b2 * st["v"] + (1.0 - self.b2) * grad * grad
        mhat = st["m"] / (1.0 - self.b1 ** st["t"])
        vhat = st["v"] / (1.0 - self.b2 ** st["t"])
        param -= lr * mhat / (np.sqrt(vhat) + self.eps)
        return param

    def remap(self, parents, is_new):
        """Re-index moment rows after densify/prune; new rows reset to 0."""
        for st in self.state.values():
            for key in ("m", "v"):
                arr = st[key][parents].copy()
                arr[is_new] = 0.0
                st[key] = arr


# ---------------------------------------------------------------------------
# adaptive density control


def _densify_params(params, grad_stats, cfg, extent, rng):
    """Clone/split over-threshold primitives and prune transparent ones.

    ``params`` is a dict of row-aligned (N, ...) arrays that must include
    mu, q_raw, log_s and o_logit.  Returns (new params, parent row index
    per surviving row, new-row mask, info dict).
    """
    n = params["mu"].shape[0]
    stats = np.asarray(grad_stats, dtype=np.float64)
    if stats.shape != (n,):
        raise OutOfRange(f"grad stats must be ({n},), got {stats.shape}")

    over = stats >= cfg.densify_grad_threshold
    # every clone or split adds one net primitive; stay within the cap by
    # keeping only the highest-gradient candidates
    budget = cfg.max_primitives - n
    if budget <= 0:
        over[:] = False
    else:
        cand = np.nonzero(over)[0]
        if cand.size > budget:
            order = np.argsort(-stats[cand], kind="stable")
            over = np.zeros(n, dtype=bool)
            over[cand[order[:budget]]] = True
    scales = np.exp(params["log_s"])
    big = scales.max(axis=1) >= 0.01 * extent
    clone = over & ~big
    split = over & big

    keep = np.nonzero(~split)[0]
    c_idx = np.nonzero(clone)[0]
    s_idx = np.nonzero(split)[0]
    parents = np.concatenate([keep, c_idx, s_idx, s_idx])
    out = {k: np.asarray(v)[parents].copy() for k, v in params.items()}

    ns = s_idx.size
    if ns:
        child = slice(parents.size - 2 * ns, parents.size)
        sp = np.concatenate([s_idx, s_idx])
        q = normalize_rows(params["q_raw"][sp], eps=1e-12)
        R = quat_to_rot(q)
        offs = rng.standard_normal((2 * ns, 3)) * scales[sp]
        out["mu"][child] = params["mu"][sp] + np.einsum("nij,nj->ni", R, offs)
        out["log_s"][child] = params["log_s"][sp] - np.log(1.6)

    alive = sigmoid(out["o_logit"]) >= cfg.prune_opacity_threshold
    is_new = np.arange(parents.size) >= keep.size
    info = {
        "cloned": int(c_idx.size),
        "split": int(s_idx.size),
        "pruned": int(np.count_nonzero(~alive)),
        "count": int(np.count_nonzero(alive)),
    }
    return (
        {k: v[alive] for k, v in out.items()},
        parents[alive],
        is_new[alive],
        info,
    )


def _model_params(model):
    geom = model.geometry
    params = {
        "mu": geom.mu.copy(), "q_raw": geom.q_raw.copy(),
        "log_s": geom.log_s.copy(), "o_logit": geom.o_logit.copy(),
        "n_raw": geom.n_raw.copy(),
    }
    if model.stage == STAGE_BASE:
        params["sh"] = model.sh.coefficients.copy()
    else:
        sh = model.shading
        params.update({
            "delta_c": sh.delta_c.copy(), "k_a_raw": sh.k_a_raw.copy(),
            "k_d_raw": sh.k_d_raw.copy(), "k_s_raw": sh.k_s_raw.copy(),
            "log_beta": sh.log_beta.copy(),
        })
    return params


def _params_model(params, model):
    geom = GaussianGeometry(
        params["mu"], params["q_raw"], params["log_s"],
        params["o_logit"], params["n_raw"],
    )
    if model.stage == STAGE_BASE:
        sh = ShColor(params["sh"], model.sh.degree)
        return BasicSceneModel(STAGE_BASE, geom, sh=sh,
                               metadata=dict(model.metadata))
    shading = ShadingAttributes(
        params["delta_c"], params["k_a_raw"], params["k_d_raw"],
        params["k_s_raw"], params["log_beta"],
    )
    return BasicSceneModel(STAGE_EDITABLE, geom, shading=shading,
                           palette=model.palette.copy(),
                           metadata=dict(model.metadata))


def scene_extent(mu):
    """Half the diagonal of the primitives' bounding box."""
    mu = np.asarray(mu)
    if mu.size == 0:
        return 1.0
    return max(0.5 * float(np.linalg.norm(mu.max(axis=0) - mu.min(axis=0))), 1e-6)


def densify_and_prune(model, grad_stats, cfg, extent=None, rng=None):
    """Apply one round of adaptive density control to a scene model.

    Primitives whose accumulated mean gradient magnitude exceeds the
    threshold are cloned (small ones) or split into two at scale / 1.6
    (large ones); primitives with mapped opacity below the prune
    threshold are removed.  Returns (new model, info dict with
    cloned/split/pruned/count).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if extent is None:
        extent = scene_extent(model.geometry.mu)
    params, parents, is_new, info = _densify_params(
        _model_params(model), grad_stats, cfg, extent, rng
    )
    return _params_model(params, model), info


# ---------------------------------------------------------------------------
# initialization


def _dc_colors_from_view(points, cam, image):
    """Per-point rgb from the training pixel each point projects to.

    Points behind the camera or off screen fall back to mid gray.
    """
    rel = (points - cam.position[None, :]) @ cam.rotation.T
    rgb = np.full((points.shape[0], 3), 0.5)
    z = rel[:, 2]
    ok = z > 1e-6
    zs = np.where(ok, z, 1.0)
    px = (cam.focal * rel[:, 0] / zs + cam.center_px[0]).astype(np.int64)
    py = (cam.focal * rel[:, 1] / zs + cam.center_px[1]).astype(np.int64)
    ok &= (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
    idx = np.nonzero(ok)[0]
    rgb[idx] = image[py[idx], px[idx], :3]
    return rgb


def _inside_any_silhouette(points, dataset):
    keep = np.zeros(points.shape[0], dtype=bool)
    for cam, img in zip(dataset.cameras, dataset.images):
        rel = (points - cam.position[None, :]) @ cam.rotation.T
        z = rel[:, 2]
        ok = z > 1e-6
        zs = np.where(ok, z, 1.0)
        px = (cam.focal * rel[:, 0] / zs + cam.center_px[0]).astype(np.int64)
        py = (cam.focal * rel[:, 1] / zs + cam.center_px[1]).astype(np.int64)
        ok &= (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
        idx = np.nonzero(ok)[0]
        keep[idx] |= img[py[idx], px[idx], 3] > 0.0
    return keep


def initialize_base(dataset, cfg, rng):
    """Uniform in-box point seeding with data-driven scales and colors."""
    lo, hi = dataset.bbox()
    pts = rng.uniform(lo, hi, (cfg.init_count, 3))
    if cfg.silhouette_carve:
        for _ in range(20):
            keep = _inside_any_silhouette(pts, dataset)
            if keep.all():
                break
            fresh = rng.uniform(lo, hi, (int(np.count_nonzero(~keep)), 3))
            pts = np.concatenate([pts[keep], fresh])
        pts = pts[:cfg.init_count]

    n = pts.shape[0]
    if n > 1:
        k = min(4, n)
        dists, _ = cKDTree(pts).query(pts, k=k)
        nn = np.maximum(dists[:, 1:].mean(axis=1), 1e-6)
    else:
        nn = np.full(n, 0.1 * scene_extent(np.stack([lo, hi])))
    log_s = np.log(nn)[:, None].repeat(3, axis=1)

    q_raw = np.zeros((n, 4))
    q_raw[:, 0] = 1.0
    o_logit = np.full(n, inv_sigmoid(cfg.init_opacity))
    first = dataset.cameras[0]
    n_raw = normalize_rows(first.position[None, :] - pts, eps=1e-12)
    geom = GaussianGeometry(pts, q_raw, log_s, o_logit, n_raw)

    dc = _dc_colors_from_view(pts, first, dataset.images[0])
    sh = ShColor.from_dc(dc, degree=cfg.sh_degree)
    return geom, sh


def foreground_mean_color(dataset):
    """Alpha-weighted mean rgb over every training image's pixels."""
    num = np.zeros(3)
    den = 0.0
    for img in dataset.images:
        a = img[..., 3]
        num += (img[..., :3] * a[..., None]).sum(axis=(0, 1))
        den += a.sum()
    if den <= 0.0:
        return np.full(3, 0.5)
    return num / den


# ---------------------------------------------------------------------------
# per-view loss + gradient evaluation


def _split_rgba(out):
    return np.concatenate(
        [np.asarray(out.color, dtype=np.float64),
         np.asarray(out.alpha, dtype=np.float64)[..., None]], axis=-1
    )


def _normal_term(out, cam, weights, loss, d_maps):
    if weights.normal_consistency <= 0.0:
        return loss
    target, mask = pseudo_normal_from_depth(
        np.asarray(out.depth, dtype=np.float64),
        np.asarray(out.alpha, dtype=np.float64), cam,
    )
    nloss, d_n = normal_consistency_loss(
        np.asarray(out.normal, dtype=np.float64), target, mask
    )
    d_maps["normal"] = weights.normal_consistency * d_n
    return loss + weights.normal_consistency * nloss


def _check_finite(loss):
    if not np.isfinite(loss):
        raise DivergedLoss(f"loss became {loss}")
    return loss


def _stage1_step(geom, sh, cam, gt, weights):
    dirs = view_dirs(geom.mu, cam.position)
    rgb, sh_cache = eval_sh(sh, dirs)
    out, state = rasterize_forward(
        geom, rgb, cam, channels=("color", "alpha", "depth", "normal")
    )
    loss, d_rgba = photometric_loss(_split_rgba(out), gt, weights)
    _check_finite(loss)
    d_maps = {"color": d_rgba[..., :3], "alpha": d_rgba[..., 3]}
    loss = _normal_term(out, cam, weights, loss, d_maps)

    g = rasterize_backward(state, d_maps)
    d_coeffs, d_dir = eval_sh_backward(sh_cache, g["d_colors"])
    grads = {
        "mu": g["d_mu"] + view_dirs_backward(geom.mu, cam.position, d_dir),
        "q_raw": g["d_q_raw"], "log_s": g["d_log_s"],
        "o_logit": g["d_o_logit"], "n_raw": g["d_n_raw"], "sh": d_coeffs,
    }
    stat = np.linalg.norm(g["d_mean2d"], axis=1) + np.linalg.norm(g["d_n_raw"], axis=1)
    return loss, grads, stat


def _stage2_step(geom, attrs, palette, light, cam, gt, weights):
    rgb, _, cache = shade_gaussians(geom, attrs, palette, light, cam)
    k_a, k_d, k_s, beta = attrs.k_a, attrs.k_d, attrs.k_s, attrs.beta
    out, state = rasterize_forward(
        geom, rgb, cam, channels=("color", "alpha", "depth", "normal"),
        attrs={"delta_c": attrs.delta_c, "k_a": k_a, "k_d": k_d,
               "k_s": k_s, "beta": beta},
    )
    loss, d_rgba = photometric_loss(_split_rgba(out), gt, weights)
    _check_finite(loss)
    d_maps = {"color": d_rgba[..., :3], "alpha": d_rgba[..., 3]}
    loss = _normal_term(out, cam, weights, loss, d_maps)

    if weights.offset_sparsity > 0.0:
        oloss, d_off = offset_sparsity_loss(np.asarray(out.attr["delta_c"], dtype=np.float64))
        loss += weights.offset_sparsity * oloss
        d_maps["delta_c"] = weights.offset_sparsity * d_off
    if weights.bilateral_smoothness > 0.0:
        gt_rgb = np.asarray(gt)[..., :3]
        for name in ("k_a", "k_d", "k_s", "beta"):
            bloss, d_map = bilateral_smoothness(
                np.asarray(out.attr[name], dtype=np.float64), gt_rgb
            )
            loss += weights.bilateral_smoothness * bloss
            d_maps[name] = weights.bilateral_smoothness * d_map

    g = rasterize_backward(state, d_maps)
    sg = shade_backward(cache, g["d_colors"])
    da = g["d_attrs"]

    d_o_logit = g["d_o_logit"]
    if weights.opacity_l1 > 0.0:
        oloss, d_o = opacity_l1_loss(geom.o_logit)
        loss += weights.opacity_l1 * oloss
        d_o_logit = d_o_logit + weights.opacity_l1 * d_o

    grads = {
        "mu": g["d_mu"] + sg["d_mu"],
        "q_raw": g["d_q_raw"], "log_s": g["d_log_s"], "o_logit": d_o_logit,
        "n_raw": g["d_n_raw"] + sg["d_n_raw"],
        "delta_c": sg["d_delta_c"] + da.get("delta_c", 0.0),
        "k_a_raw": sg["d_k_a_raw"] + da.get("k_a", 0.0) * k_a * (1.0 - k_a),
        "k_d_raw": sg["d_k_d_raw"] + da.get("k_d", 0.0) * k_d * (1.0 - k_d),
        "k_s_raw": sg["d_k_s_raw"] + da.get("k_s", 0.0) * k_s * (1.0 - k_s),
        "log_beta": sg["d_log_beta"] + da.get("beta", 0.0) * (beta - 1.0),
    }
    stat = np.linalg.norm(g["d_mean2d"], axis=1) + np.linalg.norm(grads["n_raw"], axis=1)
    return loss, grads, stat


_GEOM_KEYS = ("mu", "q_raw", "log_s", "o_logit", "n_raw")
_LR_KEYS = {"mu": "lr_mu", "q_raw": "lr_q", "log_s": "lr_log_s",
            "o_logit": "lr_o", "sh": "lr_sh", "n_raw": "lr_normal",
            "delta_c": "lr_shading", "k_a_raw": "lr_shading",
            "k_d_raw": "lr_shading", "k_s_raw": "lr_shading",
            "log_beta": "lr_shading"}


def _geom_from(params):
    return GaussianGeometry(*(params[k] for k in _GEOM_KEYS))


def _attrs_from(params):
    return ShadingAttributes(params["delta_c"], params["k_a_raw"],
                             params["k_d_raw"], params["k_s_raw"],
                             params["log_beta"])


def _run_stage(params, dataset, cfg, iters, step_fn, eval_fn, rng,
               densify_start=None, decay_extra=()):
    """Shared optimization loop for both stages; mutates ``params``.

    ``densify_start`` overrides the first densify/prune iteration;
    ``decay_extra`` names additional parameters whose learning rate follows
    the shading decay schedule.
    """
    if len(dataset) < 2:
        raise DatasetEmpty("training needs at least two views")
    adam = Adam(cfg.adam_eps, cfg.adam_betas)
    extent = scene_extent(np.stack(dataset.bbox()))
    until = cfg.until_iter(iters)
    start = cfg.densify_start_iter if densify_start is None else densify_start
    holdout = len(dataset) - 1

    stats_sum = np.zeros(params["mu"].shape[0])
    stats_iters = 0
    log = []
    for it in range(1, iters + 1):
        view = int(rng.integers(len(dataset)))
        cam, gt = dataset.cameras[view], dataset.images[view]
        loss, grads, stat = step_fn(params, cam, gt)
        if not np.isfinite(loss):
            raise DivergedLoss(f"loss became {loss} at iteration {it}")

        frac = it / max(iters, 1)
        for name, grad in grads.items():
            lr = getattr(cfg, _LR_KEYS[name])
            if name == "mu" and cfg.lr_mu > 0.0:
                lr = cfg.lr_mu * (cfg.lr_mu_final / cfg.lr_mu) ** frac
            elif (_LR_KEYS[name] in ("lr_shading", "lr_normal")
                  or name in decay_extra):
                lr = lr * cfg.lr_decay_floor ** frac
            adam.step(name, params[name], grad, lr)

        stats_sum += stat
        stats_iters += 1

        if it % cfg.densify_interval == 0:
            if start <= it <= until:
                mean_stat = stats_sum / max(stats_iters, 1)
                new, parents, is_new, info = _densify_params(
                    params, mean_stat, cfg, extent, rng
                )
                if new["mu"].shape[0] > 0:
                    params.clear()
                    params.update(new)
                    adam.remap(parents, is_new)
            # Judge densification on the trailing interval only: early
            # large-transient gradients would otherwise dominate the mean
            # at the first event and split primitives that have long since
            # converged.
            stats_sum = np.zeros(params["mu"].shape[0])
            stats_iters = 0

        if it % cfg.log_interval == 0 or it == iters:
            log.append({
                "iteration": it, "loss": float(loss),
                "count": int(params["mu"].shape[0]),
                "psnr": float(psnr(eval_fn(params, dataset.cameras[holdout]),
                                   dataset.images[holdout])),
            })
    return log


def train_base(dataset, cfg=None, init=None):
    """Stage 1: fit base splats to the dataset; returns (model, log).

    ``init`` optionally supplies a (geometry, sh) starting point instead
    of the default uniform in-box seeding.
    """
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    geom, sh = init if init is not None else initialize_base(dataset, cfg, rng)
    geom = geom.copy()
    sh = ShColor(sh.coefficients.copy(), sh.degree)
    degree = sh.degree
    params = {**{k: getattr(geom, k) for k in _GEOM_KEYS}, "sh": sh.coefficients}

    def step(p, cam, gt):
        return _stage1_step(_geom_from(p), ShColor(p["sh"], degree), cam, gt,
                            cfg.weights)

    def eval_view(p, cam):
        model = BasicSceneModel(STAGE_BASE, _geom_from(p),
                                sh=ShColor(p["sh"], degree))
        return render_model(model, cam)

    log = _run_stage(params, dataset, cfg, cfg.stage1_iters, step, eval_view, rng)
    model = BasicSceneModel(
        STAGE_BASE, _geom_from(params), sh=ShColor(params["sh"], degree),
        metadata={"stage1_iters": cfg.stage1_iters, "seed": cfg.seed},
    )
    return model, log


def _stage2_init(base, c_p):
    """Initial reflection attributes for stage 2.

    A neutral start: no palette offset and mid-range coefficient raws
    (sigmoid(0) = 0.5 for each reflection weight), which keeps every
    coefficient at its maximum-gradient point.  Appearance-matched
    initializations were tried and converge to worse optima here.
    """
    n = len(base.geometry)
    return {
        "delta_c": np.zeros((n, 3)),
        "k_a_raw": np.zeros(n),
        "k_d_raw": np.zeros(n),
        "k_s_raw": np.zeros(n),
        "log_beta": np.full(n, np.log(9.0)),  # beta = exp(log_beta) + 1 = 10
    }


def train_editable(base, dataset, cfg=None):
    """Stage 2: re-fit the base geometry with reflection attributes.

    The palette color is frozen to the alpha-weighted mean rgb of the
    training images; spherical-harmonics colors are discarded.  Returns
    (editable model, log).
    """
    cfg = cfg or TrainConfig()
    if base.stage != STAGE_BASE:
        raise OutOfRange("stage-2 training expects a base-stage model")
    rng = np.random.default_rng(cfg.seed + 1)
    palette = Palette(foreground_mean_color(dataset))
    light = dataset.light

    geom = base.geometry.copy()
    n = len(geom)
    params = {k: getattr(geom, k).copy() for k in _GEOM_KEYS}
    params.update(_stage2_init(base, palette.c_p))

    def step(p, cam, gt):
        return _stage2_step(_geom_from(p), _attrs_from(p), palette, light,
                            cam, gt, cfg.weights)

    def eval_view(p, cam):
        model = BasicSceneModel(STAGE_EDITABLE, _geom_from(p),
                                shading=_attrs_from(p), palette=palette)
        return render_model(model, cam, light)

    # Stage 2 refines an already-converged geometry, so the densify/prune
    # schedule starts at the first interval: the sparsity term drives
    # redundant primitives transparent from the outset, and removing them
    # in small periodic batches lets the photometric loss repair each cut
    # while the step sizes are still large.  A single late cliff-prune of
    # the accumulated low-opacity set costs over a dB that the remaining
    # iterations cannot win back.  The opacity rate follows the shading
    # decay so the sparsity pressure tapers as training ends.
    log = _run_stage(params, dataset, cfg, cfg.stage2_iters, step, eval_view,
                     rng, densify_start=cfg.densify_interval,
                     decay_extra=("o_logit",))
    model = BasicSceneModel(
        STAGE_EDITABLE, _geom_from(params), shading=_attrs_from(params),
        palette=palette,
        metadata={"stage2_iters": cfg.stage2_iters, "seed": cfg.seed,
                  "light": light.to_dict(),
                  "transfer_function": dataset.manifest.get("transfer_function")},
    )
    return model, log


# ---------------------------------------------------------------------------
# rendering / logging helpers


def render_model(model, cam, light=None, dtype=np.float32):
    """RGBA image of a single basic model (either stage) from one camera."""
    if model.is_quantized:
        from .vq import dequantize_model
        model = dequantize_model(model)
    if model.stage == STAGE_BASE:
        dirs = view_dirs(model.geometry.mu, cam.position)
        rgb, _ = eval_sh(model.sh, dirs)
    else:
        light = light or LightConfig()
        rgb, _, _ = shade_gaussians(model.geometry, model.shading,
                                    model.palette, light, cam)
    out, _ = rasterize_forward(model.geometry, rgb, cam,
                               channels=("color", "alpha"), dtype=dtype)
    return _split_rgba(out)


def write_training_log(path, records):
    """Write the training curve as line-delimited JSON records."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
