"""Pixel-loop kernels for the tile rasterizer.

Single-threaded on purpose: gradient accumulation order is then fixed,
so repeated runs are bit-identical. No fastmath for the same reason.
"""

import numpy as np
from numba import njit

ALPHA_SKIP = 1.0 / 255.0
ALPHA_MAX = 0.99


@njit(cache=True)
def build_pairs(x0, x1, y0, y1, offsets, tiles_x, out_tile, out_gauss):
    for g in range(x0.shape[0]):
        w = offsets[g]
        for ty in range(y0[g], y1[g]):
            for tx in range(x0[g], x1[g]):
                out_tile[w] = ty * tiles_x + tx
                out_gauss[w] = g
                w += 1


@njit(cache=True)
def blend_forward(height, width, tile_size, tiles_x, tiles_y,
                  tile_starts, pair_gauss,
                  means2d, conics, opacities, features, radii, background,
                  trans_floor, out_channels, out_alpha, out_trans, out_last):
    """Front-to-back compositing, entries outer / their pixel box inner.

    Each entry only touches pixels within its binning radius; anything
    farther sits past 3.5 sigma where alpha < 1/255, i.e. exactly the
    pairs the per-pixel loop would skip anyway. Per pixel the applied
    contributions and their order are unchanged, so the output matches
    a full per-pixel sweep bit for bit. Once every pixel of a tile is
    below the transmittance floor the rest of its entries are skipped
    outright; none of them could have contributed anywhere.

    out_trans and out_last record each pixel's final transmittance and
    last applied entry index, which the backward pass reuses instead of
    replaying the compositing.
    """
    k_dim = features.shape[1]
    for py in range(height):
        for px in range(width):
            out_trans[py, px] = 1.0
            out_last[py, px] = -1
    for t in range(tiles_x * tiles_y):
        ty = t // tiles_x
        tx = t % tiles_x
        y_start = ty * tile_size
        x_start = tx * tile_size
        y_end = min(height, (ty + 1) * tile_size)
        x_end = min(width, (tx + 1) * tile_size)
        alive = (y_end - y_start) * (x_end - x_start)
        for idx in range(tile_starts[t], tile_starts[t + 1]):
            if alive == 0:
                break
            g = pair_gauss[idx]
            # clamp in float space first: radii may be inf for wild scales
            f = means2d[g, 1] - radii[g]
            by0 = y_start if f < y_start else min(int(f), y_end)
            f = means2d[g, 1] + radii[g] + 1.0
            by1 = y_end if f > y_end else max(int(f), y_start)
            f = means2d[g, 0] - radii[g]
            bx0 = x_start if f < x_start else min(int(f), x_end)
            f = means2d[g, 0] + radii[g] + 1.0
            bx1 = x_end if f > x_end else max(int(f), x_start)
            for py in range(by0, by1):
                for px in range(bx0, bx1):
                    tr = out_trans[py, px]
                    if tr < trans_floor:
                        continue
                    dx = px - means2d[g, 0]
                    dy = py - means2d[g, 1]
                    power = (-0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy)
                             - conics[g, 1] * dx * dy)
                    if power > 0.0:
                        continue
                    alpha = opacities[g] * np.exp(power)
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_SKIP:
                        continue
                    w = alpha * tr
                    for k in range(k_dim):
                        out_channels[k, py, px] += features[g, k] * w
                    tr = tr * (1.0 - alpha)
                    out_trans[py, px] = tr
                    out_last[py, px] = idx
                    if tr < trans_floor:
                        alive -= 1
    for py in range(height):
        for px in range(width):
            tr = out_trans[py, px]
            for k in range(k_dim):
                out_channels[k, py, px] += background[k] * tr
            out_alpha[py, px] = 1.0 - tr


@njit(cache=True)
def replay_forward(height, width, tile_size, tiles_x, tiles_y,
                   tile_starts, pair_gauss,
                   means2d, conics, opacities, radii,
                   trans_floor, out_trans, out_last):
    """Transmittance and last-entry maps alone, for a cache-less backward.

    Identical walk and float ops as blend_forward minus the channel
    accumulation, so the maps come out bit-equal.
    """
    for py in range(height):
        for px in range(width):
            out_trans[py, px] = 1.0
            out_last[py, px] = -1
    for t in range(tiles_x * tiles_y):
        ty = t // tiles_x
        tx = t % tiles_x
        y_start = ty * tile_size
        x_start = tx * tile_size
        y_end = min(height, (ty + 1) * tile_size)
        x_end = min(width, (tx + 1) * tile_size)
        alive = (y_end - y_start) * (x_end - x_start)
        for idx in range(tile_starts[t], tile_starts[t + 1]):
            if alive == 0:
                break
            g = pair_gauss[idx]
            f = means2d[g, 1] - radii[g]
            by0 = y_start if f < y_start else min(int(f), y_end)
            f = means2d[g, 1] + radii[g] + 1.0
            by1 = y_end if f > y_end else max(int(f), y_start)
            f = means2d[g, 0] - radii[g]
            bx0 = x_start if f < x_start else min(int(f), x_end)
            f = means2d[g, 0] + radii[g] + 1.0
            bx1 = x_end if f > x_end else max(int(f), x_start)
            for py in range(by0, by1):
                for px in range(bx0, bx1):
                    tr = out_trans[py, px]
                    if tr < trans_floor:
                        continue
                    dx = px - means2d[g, 0]
                    dy = py - means2d[g, 1]
                    power = (-0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy)
                             - conics[g, 1] * dx * dy)
                    if power > 0.0:
                        continue
                    alpha = opacities[g] * np.exp(power)
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_SKIP:
                        continue
                    tr = tr * (1.0 - alpha)
                    out_trans[py, px] = tr
                    out_last[py, px] = idx
                    if tr < trans_floor:
                        alive -= 1


@njit(cache=True)
def blend_backward(height, width, tile_size, tiles_x, tiles_y,
                   tile_starts, pair_gauss,
                   means2d, conics, opacities, features, radii, background,
                   trans_final, last, grad_channels, grad_alpha,
                   out_dmean2d, out_dconic, out_dopac, out_dfeat):
    """Backward of blend_forward for upstream grads on channels and alpha.

    Takes the forward pass's final-transmittance and last-applied-entry
    maps and walks entries back to front in the same entries-outer /
    pixel-box-inner order, rebuilding every contribution's incoming
    transmittance by division and accumulating exact gradients. Per
    pixel the arithmetic hits the same entries in the same order as a
    per-pixel sweep, and a gradient slot is only ever touched by its
    own entry in row-major pixel order, so the result matches the
    per-pixel formulation bit for bit. The alpha=0.99 clamp passes no
    gradient where active.
    """
    k_dim = features.shape[1]

    # channel-last copy of the upstream grad so the k loops stream
    gct = np.empty((height, width, k_dim))
    for k in range(k_dim):
        for py in range(height):
            for px in range(width):
                gct[py, px, k] = grad_channels[k, py, px]

    # dL/dT_final: background term plus the alpha channel.
    dl_dtfinal = np.empty((height, width))
    for py in range(height):
        for px in range(width):
            bg_dot = 0.0
            for k in range(k_dim):
                bg_dot += background[k] * gct[py, px, k]
            dl_dtfinal[py, px] = bg_dot - grad_alpha[py, px]

    # entries back to front with per-pixel running state
    run = trans_final.copy()
    accum = np.zeros((height, width, k_dim))
    for t in range(tiles_x * tiles_y):
        ty = t // tiles_x
        tx = t % tiles_x
        y_start = ty * tile_size
        x_start = tx * tile_size
        y_end = min(height, (ty + 1) * tile_size)
        x_end = min(width, (tx + 1) * tile_size)
        s = tile_starts[t]
        # entries past the tile's last applied index touched nothing
        tile_last = -1
        for py in range(y_start, y_end):
            for px in range(x_start, x_end):
                if last[py, px] > tile_last:
                    tile_last = last[py, px]
        for idx in range(min(tile_starts[t + 1] - 1, tile_last), s - 1, -1):
            g = pair_gauss[idx]
            f = means2d[g, 1] - radii[g]
            by0 = y_start if f < y_start else min(int(f), y_end)
            f = means2d[g, 1] + radii[g] + 1.0
            by1 = y_end if f > y_end else max(int(f), y_start)
            f = means2d[g, 0] - radii[g]
            bx0 = x_start if f < x_start else min(int(f), x_end)
            f = means2d[g, 0] + radii[g] + 1.0
            bx1 = x_end if f > x_end else max(int(f), x_start)
            for py in range(by0, by1):
                for px in range(bx0, bx1):
                    if idx > last[py, px]:
                        continue  # never applied here: floor cut it off
                    dx = px - means2d[g, 0]
                    dy = py - means2d[g, 1]
                    power = (-0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy)
                             - conics[g, 1] * dx * dy)
                    if power > 0.0:
                        continue
                    gauss = np.exp(power)
                    alpha = opacities[g] * gauss
                    clamped = alpha > ALPHA_MAX
                    if clamped:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_SKIP:
                        continue
                    one_minus = 1.0 - alpha
                    tr = run[py, px] / one_minus  # transmittance seen by this entry
                    run[py, px] = tr
                    w = alpha * tr
                    dl_dalpha = 0.0
                    for k in range(k_dim):
                        gc = gct[py, px, k]
                        out_dfeat[g, k] += w * gc
                        dl_dalpha += (features[g, k] - accum[py, px, k]) * tr * gc
                        accum[py, px, k] = alpha * features[g, k] + one_minus * accum[py, px, k]
                    # T_final = prod(1-alpha_j): dT_final/dalpha_i = -T_final/(1-alpha_i)
                    dl_dalpha -= dl_dtfinal[py, px] * trans_final[py, px] / one_minus
                    if not clamped:
                        out_dopac[g] += gauss * dl_dalpha
                        dl_dpower = alpha * dl_dalpha
                        out_dconic[g, 0] += -0.5 * dx * dx * dl_dpower
                        out_dconic[g, 1] += -dx * dy * dl_dpower
                        out_dconic[g, 2] += -0.5 * dy * dy * dl_dpower
                        out_dmean2d[g, 0] += (conics[g, 0] * dx + conics[g, 1] * dy) * dl_dpower
                        out_dmean2d[g, 1] += (conics[g, 1] * dx + conics[g, 2] * dy) * dl_dpower
