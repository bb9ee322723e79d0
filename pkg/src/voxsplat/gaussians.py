"""Gaussian primitive parameterization, camera model, projection, SH color.

All per-primitive quantities are stored as structure-of-arrays so the whole
set can be projected/shaded with vectorized numpy.  Constrained attributes
are stored unconstrained (log-scale, opacity logit, unnormalized quaternion
and normal) and mapped on read, which keeps the optimizer box-free.
"""

from dataclasses import dataclass

import numpy as np

from voxsplat._mathutil import (
    inv_sigmoid,
    normalize_rows,
    normalize_rows_backward,
    sigmoid,
)
from voxsplat.errors import CulledBehindCamera

NEAR_PLANE = 0.01
COV2D_DILATION = 0.3


# ---------------------------------------------------------------------------
# primitive storage


@dataclass
class GaussianGeometry:
    """Geometry attributes of a primitive set (unconstrained storage).

    mu       (N, 3) world positions
    q_raw    (N, 4) quaternions, w-first, renormalized on read
    log_s    (N, 3) log scales, exponentiated on read
    o_logit  (N,)   opacity logits, sigmoid-mapped on read
    n_raw    (N, 3) normals, unit-normalized on read
    """

    mu: np.ndarray
    q_raw: np.ndarray
    log_s: np.ndarray
    o_logit: np.ndarray
    n_raw: np.ndarray

    def __post_init__(self):
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        self.q_raw = np.atleast_2d(np.asarray(self.q_raw, dtype=np.float64))
        self.log_s = np.atleast_2d(np.asarray(self.log_s, dtype=np.float64))
        self.o_logit = np.atleast_1d(np.asarray(self.o_logit, dtype=np.float64))
        self.n_raw = np.atleast_2d(np.asarray(self.n_raw, dtype=np.float64))

    @classmethod
    def from_natural(cls, mu, q, s, opacity, n):
        """Build storage from natural-domain values (q, s, opacity in range)."""
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        opacity = np.clip(np.atleast_1d(np.asarray(opacity, dtype=np.float64)), 1e-6, 1.0 - 1e-6)
        return cls(
            mu=mu,
            q_raw=q,
            log_s=np.log(s),
            o_logit=inv_sigmoid(opacity),
            n_raw=n,
        )

    def __len__(self):
        return self.mu.shape[0]

    @property
    def quat(self):
        return normalize_rows(self.q_raw)

    @property
    def scales(self):
        return np.exp(self.log_s)

    @property
    def opacity(self):
        return sigmoid(self.o_logit)

    @property
    def normals(self):
        return normalize_rows(self.n_raw, eps=1e-12)

    def copy(self):
        return GaussianGeometry(
            self.mu.copy(), self.q_raw.copy(), self.log_s.copy(),
            self.o_logit.copy(), self.n_raw.copy(),
        )

    def select(self, idx):
        return GaussianGeometry(
            self.mu[idx], self.q_raw[idx], self.log_s[idx],
            self.o_logit[idx], self.n_raw[idx],
        )

    @staticmethod
    def concat(parts):
        return GaussianGeometry(
            np.concatenate([p.mu for p in parts], axis=0),
            np.concatenate([p.q_raw for p in parts], axis=0),
            np.concatenate([p.log_s for p in parts], axis=0),
            np.concatenate([p.o_logit for p in parts]),
            np.concatenate([p.n_raw for p in parts], axis=0),
        )


@dataclass
class ShColor:
    """Spherical-harmonics color: coefficients (N, (L+1)^2, 3), w/ DC first."""

    coefficients: np.ndarray
    degree: int

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        want = (self.degree + 1) ** 2
        if self.coefficients.shape[-2] != want or self.coefficients.shape[-1] != 3:
            raise ValueError(
                f"degree {self.degree} needs (*, {want}, 3) coefficients, "
                f"got {self.coefficients.shape}"
            )

    @classmethod
    def from_dc(cls, rgb, degree=0):
        """Constant color: DC band set so eval_sh returns rgb, rest zero."""
        rgb = np.atleast_2d(np.asarray(rgb, dtype=np.float64))
        n = rgb.shape[0]
        coeffs = np.zeros((n, (degree + 1) ** 2, 3))
        coeffs[:, 0, :] = (rgb - 0.5) / SH_C0
        return cls(coeffs, degree)


# ---------------------------------------------------------------------------
# camera


@dataclass
class Camera:
    """Pinhole camera: +z forward, +x right, +y down in camera space."""

    position: np.ndarray
    rotation: np.ndarray  # 3x3 world-to-camera, row-orthonormal
    fov_y: float
    width: int
    height: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not (0.0 < self.fov_y < np.pi):
            raise ValueError(f"fov_y out of (0, pi): {self.fov_y}")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation not orthonormal (err {err:.2e})")

    @property
    def focal(self):
        return 0.5 * self.height / np.tan(0.5 * self.fov_y)

    @property
    def center_px(self):
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    @classmethod
    def look_at(cls, position, target, fov_y, width, height, up=(0.0, 0.0, 1.0)):
        position = np.asarray(position, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        fwd = normalize_rows(target - position)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(up, fwd)
        nr = np.linalg.norm(right)
        if nr < 1e-8:
            # degenerate pole: fall back to +x as up reference
            right = np.cross(np.array([1.0, 0.0, 0.0]), fwd)
            nr = np.linalg.norm(right)
        right /= nr
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd], axis=0)
        return cls(position, rot, fov_y, width, height)

    def to_dict(self):
        return {
            "position": [float(v) for v in self.position],
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "fov_y": float(self.fov_y),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.array(d["position"], dtype=np.float64),
            np.array(d["rotation"], dtype=np.float64).reshape(3, 3),
            float(d["fov_y"]),
            int(d["width"]),
            int(d["height"]),
        )


def orbit_camera(center, radius, polar, azimuth, fov_y, width, height):
    """Camera on a sphere around ``center`` looking at it.

    polar in [-pi/2, pi/2] (elevation), azimuth in [-pi, pi]; the direction
    convention matches the orbital light one: x = cos cos, y = cos sin, z = sin.
    """
    d = np.array([
        np.cos(polar) * np.cos(azimuth),
        np.cos(polar) * np.sin(azimuth),
        np.sin(polar),
    ])
    pos = np.asarray(center, dtype=np.float64) + radius * d
    return Camera.look_at(pos, center, fov_y, width, height)


# ---------------------------------------------------------------------------
# quaternion / covariance


def quat_to_rot(q):
    """Unit quaternions (N,4) w-first -> rotation matrices (N,3,3)."""
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=q.dtype)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rot_backward(q, dR):
    """Gradient w.r.t. the unit quaternion given upstream dL/dR."""
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = dR
    dw = 2 * (
        -z * g[:, 0, 1] + y * g[:, 0, 2]
        + z * g[:, 1, 0] - x * g[:, 1, 2]
        - y * g[:, 2, 0] + x * g[:, 2, 1]
    )
    dx = 2 * (
        y * g[:, 0, 1] + z * g[:, 0, 2]
        + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
        + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2]
    )
    dy = 2 * (
        -2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2]
        + x * g[:, 1, 0] + z * g[:, 1, 2]
        - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2]
    )
    dz = 2 * (
        -2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2]
        + w * g[:, 1, 0] - 2 * z * g[:, 1, 1] + y * g[:, 1, 2]
        + x * g[:, 2, 0] + y * g[:, 2, 1]
    )
    return np.stack([dw, dx, dy, dz], axis=1)


def build_covariance(q, s):
    """Sigma = R diag(s) diag(s) R^T for unit quaternion q, scales s."""
    single = np.asarray(q).ndim == 1
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    R = quat_to_rot(q)
    M = R * s[:, None, :]
    cov = M @ np.swapaxes(M, 1, 2)
    return cov[0] if single else cov


def covariance_backward(q, s, d_cov):
    """Gradients of build_covariance w.r.t. unit q and s.

    d_cov is the full dL/dSigma (callers split symmetric gradients evenly).
    """
    R = quat_to_rot(q)
    M = R * s[:, None, :]
    dM = (d_cov + np.swapaxes(d_cov, 1, 2)) @ M
    ds = np.einsum("nik,nik->nk", dM, R)
    dR = dM * s[:, None, :]
    dq = quat_to_rot_backward(q, dR)
    return dq, ds


# ---------------------------------------------------------------------------
# projection


def project_gaussians(geom: GaussianGeometry, cam: Camera, near=NEAR_PLANE):
    """Project all primitives; returns a cache dict used by the backward.

    Arrays are full length N with ``valid`` marking primitives in front of
    the near plane; invalid rows hold unusable values and must be masked.
    """
    mu = geom.mu
    q = geom.quat
    s = geom.scales
    Wr = cam.rotation
    t = (mu - cam.position[None, :]) @ Wr.T
    tz = t[:, 2]
    valid = tz > near
    tz_safe = np.where(valid, tz, 1.0)

    f = cam.focal
    cx, cy = cam.center_px
    mean2d = np.stack(
        [f * t[:, 0] / tz_safe + cx, f * t[:, 1] / tz_safe + cy], axis=1
    )

    R = quat_to_rot(q)
    M3 = R * s[:, None, :]
    cov3d = M3 @ np.swapaxes(M3, 1, 2)

    n = mu.shape[0]
    J = np.zeros((n, 2, 3), dtype=np.float64)
    J[:, 0, 0] = f / tz_safe
    J[:, 1, 1] = f / tz_safe
    J[:, 0, 2] = -f * t[:, 0] / tz_safe**2
    J[:, 1, 2] = -f * t[:, 1] / tz_safe**2

    M = J @ Wr[None, :, :]
    cov2d = M @ cov3d @ np.swapaxes(M, 1, 2)
    cov2d[:, 0, 0] += COV2D_DILATION
    cov2d[:, 1, 1] += COV2D_DILATION

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    det_safe = np.where(det > 0, det, 1.0)
    conic = np.stack([c / det_safe, -b / det_safe, a / det_safe], axis=1)
    valid = valid & (det > 0)

    return {
        "geom": geom, "cam": cam,
        "t": t, "tz": tz_safe, "valid": valid,
        "mean2d": mean2d, "cov2d": cov2d, "conic": conic, "depth": tz,
        "q": q, "s": s, "R": R, "cov3d": cov3d, "J": J, "M": M,
    }


def project_backward(cache, d_mean2d, d_cov2d, d_depth):
    """Chain projection gradients back to the unconstrained storage.

    d_cov2d is the full 2x2 dL/dCov2d per primitive (the +0.3 I dilation is
    additive so it drops out).  Returns dict with d_mu, d_q_raw, d_log_s.
    """
    geom = cache["geom"]
    cam = cache["cam"]
    t, tz = cache["t"], cache["tz"]
    J, M, cov3d = cache["J"], cache["M"], cache["cov3d"]
    q, s = cache["q"], cache["s"]
    Wr = cam.rotation
    f = cam.focal
    n = t.shape[0]
    invalid = ~cache["valid"]
    d_mean2d = np.where(invalid[:, None], 0.0, d_mean2d)
    d_cov2d = np.where(invalid[:, None, None], 0.0, d_cov2d)
    d_depth = np.where(invalid, 0.0, d_depth)

    # cov2d = M cov3d M^T
    d_cov3d = np.swapaxes(M, 1, 2) @ d_cov2d @ M
    dM = d_cov2d @ M @ np.swapaxes(cov3d, 1, 2) + np.swapaxes(d_cov2d, 1, 2) @ M @ cov3d
    dJ = dM @ Wr.T[None, :, :]

    # J entries depend on t
    dt = np.zeros((n, 3), dtype=np.float64)
    dt[:, 0] += dJ[:, 0, 2] * (-f / tz**2)
    dt[:, 1] += dJ[:, 1, 2] * (-f / tz**2)
    dt[:, 2] += (
        dJ[:, 0, 0] * (-f / tz**2)
        + dJ[:, 1, 1] * (-f / tz**2)
        + dJ[:, 0, 2] * (2 * f * t[:, 0] / tz**3)
        + dJ[:, 1, 2] * (2 * f * t[:, 1] / tz**3)
    )

    # mean2d = (f tx/tz + cx, f ty/tz + cy)
    dt[:, 0] += d_mean2d[:, 0] * f / tz
    dt[:, 1] += d_mean2d[:, 1] * f / tz
    dt[:, 2] += (
        -d_mean2d[:, 0] * f * t[:, 0] / tz**2
        - d_mean2d[:, 1] * f * t[:, 1] / tz**2
    )

    dt[:, 2] += d_depth

    d_mu = dt @ Wr

    dq_unit, ds = covariance_backward(q, s, d_cov3d)
    d_q_raw = normalize_rows_backward(geom.q_raw, dq_unit)
    d_log_s = ds * s

    return {"d_mu": d_mu, "d_q_raw": d_q_raw, "d_log_s": d_log_s}


def project_gaussian(geom: GaussianGeometry, cam: Camera, index=0):
    """Single-primitive projection; raises CulledBehindCamera when culled."""
    cache = project_gaussians(geom, cam)
    if not cache["valid"][index]:
        raise CulledBehindCamera(f"primitive {index} at camera-space z <= near")
    a, b, c = cache["conic"][index]
    return {
        "mean2d": cache["mean2d"][index],
        "cov2d": cache["cov2d"][index],
        "conic": np.array([[a, b], [b, c]]),
        "depth": cache["depth"][index],
    }


# ---------------------------------------------------------------------------
# spherical harmonics (real basis, degrees 0..3)

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


def sh_basis(dirs, degree):
    """Real SH basis values and their direction derivatives.

    Returns (basis (N,B), dbasis (N,B,3)).
    """
    dirs = np.atleast_2d(dirs)
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    nb = (degree + 1) ** 2
    B = np.zeros((n, nb))
    D = np.zeros((n, nb, 3))
    B[:, 0] = SH_C0
    if degree >= 1:
        B[:, 1] = -SH_C1 * y
        B[:, 2] = SH_C1 * z
        B[:, 3] = -SH_C1 * x
        D[:, 1, 1] = -SH_C1
        D[:, 2, 2] = SH_C1
        D[:, 3, 0] = -SH_C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        B[:, 4] = SH_C2[0] * x * y
        B[:, 5] = SH_C2[1] * y * z
        B[:, 6] = SH_C2[2] * (2 * zz - xx - yy)
        B[:, 7] = SH_C2[3] * x * z
        B[:, 8] = SH_C2[4] * (xx - yy)
        D[:, 4, 0] = SH_C2[0] * y
        D[:, 4, 1] = SH_C2[0] * x
        D[:, 5, 1] = SH_C2[1] * z
        D[:, 5, 2] = SH_C2[1] * y
        D[:, 6, 0] = SH_C2[2] * (-2 * x)
        D[:, 6, 1] = SH_C2[2] * (-2 * y)
        D[:, 6, 2] = SH_C2[2] * (4 * z)
        D[:, 7, 0] = SH_C2[3] * z
        D[:, 7, 2] = SH_C2[3] * x
        D[:, 8, 0] = SH_C2[4] * (2 * x)
        D[:, 8, 1] = SH_C2[4] * (-2 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        B[:, 9] = SH_C3[0] * y * (3 * xx - yy)
        B[:, 10] = SH_C3[1] * x * y * z
        B[:, 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        B[:, 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        B[:, 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        B[:, 14] = SH_C3[5] * z * (xx - yy)
        B[:, 15] = SH_C3[6] * x * (xx - 3 * yy)
        D[:, 9, 0] = SH_C3[0] * 6 * x * y
        D[:, 9, 1] = SH_C3[0] * (3 * xx - 3 * yy)
        D[:, 10, 0] = SH_C3[1] * y * z
        D[:, 10, 1] = SH_C3[1] * x * z
        D[:, 10, 2] = SH_C3[1] * x * y
        D[:, 11, 0] = SH_C3[2] * (-2 * x * y)
        D[:, 11, 1] = SH_C3[2] * (4 * zz - xx - 3 * yy)
        D[:, 11, 2] = SH_C3[2] * (8 * y * z)
        D[:, 12, 0] = SH_C3[3] * (-6 * x * z)
        D[:, 12, 1] = SH_C3[3] * (-6 * y * z)
        D[:, 12, 2] = SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)
        D[:, 13, 0] = SH_C3[4] * (4 * zz - 3 * xx - yy)
        D[:, 13, 1] = SH_C3[4] * (-2 * x * y)
        D[:, 13, 2] = SH_C3[4] * (8 * x * z)
        D[:, 14, 0] = SH_C3[5] * (2 * x * z)
        D[:, 14, 1] = SH_C3[5] * (-2 * y * z)
        D[:, 14, 2] = SH_C3[5] * (xx - yy)
        D[:, 15, 0] = SH_C3[6] * (3 * xx - 3 * yy)
        D[:, 15, 1] = SH_C3[6] * (-6 * x * y)
    return B, D


def eval_sh(color: ShColor, view_dirs):
    """SH color of each primitive along unit ``view_dirs`` (N,3).

    Returns (rgb (N,3), cache) with the splatting-standard +0.5 offset and
    clamp at 0 from below.
    """
    B, D = sh_basis(view_dirs, color.degree)
    raw = np.einsum("nb,nbc->nc", B, color.coefficients) + 0.5
    rgb = np.maximum(raw, 0.0)
    cache = {"basis": B, "dbasis": D, "raw": raw, "coeffs": color.coefficients}
    return rgb, cache


def eval_sh_backward(cache, d_rgb):
    """Gradients w.r.t. SH coefficients and the view direction."""
    gate = (cache["raw"] > 0).astype(np.float64)
    g = d_rgb * gate
    d_coeffs = cache["basis"][:, :, None] * g[:, None, :]
    # d color / d dir through the basis polynomials
    inner = np.einsum("nbc,nc->nb", cache["coeffs"], g)
    d_dir = np.einsum("nb,nbk->nk", inner, cache["dbasis"])
    return d_coeffs, d_dir


def view_dirs(mu, cam_position):
    """Unit directions from camera to each primitive, with backward helper."""
    v = mu - np.asarray(cam_position)[None, :]
    return normalize_rows(v, eps=1e-12)


def view_dirs_backward(mu, cam_position, d_dir):
    v = mu - np.asarray(cam_position)[None, :]
    return normalize_rows_backward(v, d_dir)
