"""Hot inner loops: tile compositing (forward/backward) and pair binning.

Jitted via :mod:`voxsplat._accel`; with ``VOXSPLAT_NO_NUMBA=1`` the same
functions run un-jitted and produce identical results.  All loops are
race-free: the forward writes per-pixel state owned by one tile, the
backward writes per-(tile, splat) gradient slots reduced outside the kernel
in a fixed order, so results are bit-identical across thread counts.
"""

import numpy as np

from voxsplat._accel import njit, prange

ALPHA_CAP = 0.99
ALPHA_SKIP = 1.0 / 255.0
T_STOP = 1e-4


@njit(cache=True)
def fill_pairs(offsets, tx0, tx1, ty0, ty1, ntx, pair_tile, pair_splat):
    n = tx0.shape[0]
    for i in range(n):
        k = offsets[i]
        for ty in range(ty0[i], ty1[i] + 1):
            for tx in range(tx0[i], tx1[i] + 1):
                pair_tile[k] = ty * ntx + tx
                pair_splat[k] = i
                k += 1


@njit(cache=True, parallel=True)
def composite_forward(tile_ranges, pair_splat, mean2d, conic, opacity, values,
                      width, height, tile_size, ntx,
                      out, contrib, last_pos, t_final):
    ntiles = tile_ranges.shape[0] - 1
    nch = values.shape[1]
    for tile in prange(ntiles):
        s0 = tile_ranges[tile]
        s1 = tile_ranges[tile + 1]
        tx = tile % ntx
        ty = tile // ntx
        x1 = min((tx + 1) * tile_size, width)
        y1 = min((ty + 1) * tile_size, height)
        for py in range(ty * tile_size, y1):
            for px in range(tx * tile_size, x1):
                T = 1.0
                last = s0
                nc = 0
                for j in range(s0, s1):
                    sp = pair_splat[j]
                    dx = px - mean2d[sp, 0]
                    dy = py - mean2d[sp, 1]
                    sigma = (0.5 * (conic[sp, 0] * dx * dx + conic[sp, 2] * dy * dy)
                             + conic[sp, 1] * dx * dy)
                    if sigma < 0.0:
                        continue
                    alpha = opacity[sp] * np.exp(-sigma)
                    if alpha > ALPHA_CAP:
                        alpha = ALPHA_CAP
                    if alpha < ALPHA_SKIP:
                        continue
                    w = T * alpha
                    for k in range(nch):
                        out[py, px, k] += w * values[sp, k]
                    T *= 1.0 - alpha
                    nc += 1
                    last = j + 1
                    if T < T_STOP:
                        break
                contrib[py, px] = nc
                last_pos[py, px] = last
                t_final[py, px] = T


@njit(cache=True, parallel=True)
def composite_backward(tile_ranges, pair_splat, mean2d, conic, opacity, values,
                       width, height, tile_size, ntx,
                       d_out, last_pos, t_final,
                       pair_dv, pair_dmean, pair_dconic, pair_dopac):
    ntiles = tile_ranges.shape[0] - 1
    nch = values.shape[1]
    for tile in prange(ntiles):
        s0 = tile_ranges[tile]
        s1 = tile_ranges[tile + 1]
        if s1 == s0:
            continue
        tx = tile % ntx
        ty = tile // ntx
        x1 = min((tx + 1) * tile_size, width)
        y1 = min((ty + 1) * tile_size, height)
        suffix = np.empty(nch, dtype=np.float64)
        for py in range(ty * tile_size, y1):
            for px in range(tx * tile_size, x1):
                last = last_pos[py, px]
                if last <= s0:
                    continue
                T = t_final[py, px]
                for k in range(nch):
                    suffix[k] = 0.0
                # walk contributors back-to-front, recomputing transmittance
                for j in range(last - 1, s0 - 1, -1):
                    sp = pair_splat[j]
                    dx = px - mean2d[sp, 0]
                    dy = py - mean2d[sp, 1]
                    sigma = (0.5 * (conic[sp, 0] * dx * dx + conic[sp, 2] * dy * dy)
                             + conic[sp, 1] * dx * dy)
                    if sigma < 0.0:
                        continue
                    g = np.exp(-sigma)
                    alpha_u = opacity[sp] * g
                    alpha = alpha_u
                    if alpha > ALPHA_CAP:
                        alpha = ALPHA_CAP
                    if alpha < ALPHA_SKIP:
                        continue
                    T = T / (1.0 - alpha)
                    w = T * alpha
                    d_alpha = 0.0
                    for k in range(nch):
                        dok = d_out[py, px, k]
                        vk = values[sp, k]
                        d_alpha += dok * (T * vk - suffix[k] / (1.0 - alpha))
                        pair_dv[j, k] += dok * w
                        suffix[k] += w * vk
                    if alpha_u < ALPHA_CAP:
                        # alpha = o * exp(-sigma); cap zeroes the gradient
                        pair_dopac[j] += g * d_alpha
                        d_sigma = -alpha_u * d_alpha
                        pair_dconic[j, 0] += 0.5 * dx * dx * d_sigma
                        pair_dconic[j, 1] += dx * dy * d_sigma
                        pair_dconic[j, 2] += 0.5 * dy * dy * d_sigma
                        gx = conic[sp, 0] * dx + conic[sp, 1] * dy
                        gy = conic[sp, 1] * dx + conic[sp, 2] * dy
                        pair_dmean[j, 0] += -d_sigma * gx
                        pair_dmean[j, 1] += -d_sigma * gy
