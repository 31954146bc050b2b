"""Compiled per-pixel loops for the local predictor.

Every routine here mirrors a readable reference in :mod:`seatbelt.predictor`;
the test suite checks the two agree pixel for pixel.
"""

import numpy as np
from numba import njit

# objective values this close to the maximum count as ties (rounding slack)
CUT_TIE_RTOL = 1e-12


@njit(cache=True, nogil=True)
def _structure(curve, sc, w_suf, m_suf, sg, tau_min, tau_max, rho_min, rho_max):
    L = curve.shape[0]
    half = sg.shape[0] // 2
    for n in range(L):
        acc = 0.0
        if half <= n < L - half:
            for m in range(2 * half + 1):
                acc += sg[m] * curve[n + m - half]
        else:
            for m in range(-half, half + 1):
                q = n + m
                # mirror padding without repeating the edge sample
                if q < 0:
                    q = -q
                elif q >= L:
                    q = 2 * (L - 1) - q
                acc += sg[m + half] * curve[q]
        sc[n] = acc if acc > 0.0 else 0.0
    total = 0.0
    for n in range(L):
        total += sc[n]
    if total <= 0.0:
        return False

    # unnormalised two-class split; j is 1-based, right-hand sums run
    # from the far end inwards
    mu_all = 0.0
    for n in range(L):
        mu_all += (n + 1) * sc[n]
    w_suf[L] = 0.0
    m_suf[L] = 0.0
    for n in range(L - 1, -1, -1):
        w_suf[n] = w_suf[n + 1] + sc[n]
        m_suf[n] = m_suf[n + 1] + (n + 1) * sc[n]
    # first pass finds the maximum, second pass the smallest cut within
    # rounding slack of it
    best_obj = -1.0
    w_left = 0.0
    mu_left = 0.0
    for idx in range(1, L):
        w_left += sc[idx - 1]
        mu_left += idx * sc[idx - 1]
        a = mu_left - mu_all
        b = m_suf[idx] - mu_all
        obj = w_left * a * a + w_suf[idx] * b * b
        if obj > best_obj:
            best_obj = obj
    floor = best_obj - CUT_TIE_RTOL * best_obj
    best_idx = 1
    w_left = 0.0
    mu_left = 0.0
    for idx in range(1, L):
        w_left += sc[idx - 1]
        mu_left += idx * sc[idx - 1]
        a = mu_left - mu_all
        b = m_suf[idx] - mu_all
        if w_left * a * a + w_suf[idx] * b * b >= floor:
            best_idx = idx
            break

    i_left = 0
    for n in range(1, best_idx):
        if sc[n] > sc[i_left]:
            i_left = n
    i_right = best_idx
    for n in range(best_idx + 1, L):
        if sc[n] > sc[i_right]:
            i_right = n
    d_edges = i_right - i_left
    if d_edges < tau_min or d_edges > tau_max:
        return False
    peak = max(sc[i_left], sc[i_right])
    if peak <= 0.0:
        return False
    ratio = d_edges / peak
    return rho_min <= ratio <= rho_max


@njit(cache=True, nogil=True)
def _project(patch, curve):
    L = patch.shape[0]
    for j in range(L):
        curve[j] = 0.0
    for i in range(L):
        for j in range(L):
            if j == 0:
                gx = patch[i, 1] - patch[i, 0]
            elif j == L - 1:
                gx = patch[i, L - 1] - patch[i, L - 2]
            else:
                gx = (patch[i, j + 1] - patch[i, j - 1]) / 2.0
            if i == 0:
                gy = patch[1, j] - patch[0, j]
            elif i == L - 1:
                gy = patch[L - 1, j] - patch[L - 2, j]
            else:
                gy = (patch[i + 1, j] - patch[i - 1, j]) / 2.0
            curve[j] += np.sqrt(gx * gx + gy * gy)


@njit(cache=True, nogil=True)
def _sample(img, flat, x, y, d, ox, oy, rel, taps, exact, pad, interior, patch):
    """Bilinear patch read.  ``rel`` holds flat offsets ``oy * W + ox`` and
    ``taps`` the weights as ``(D, 4, L*L)``."""
    H, W = img.shape
    L = patch.shape[0]
    n = L * L
    base = y * W + x
    p = patch.ravel()
    r = rel[d]
    if interior and exact[d]:
        for c in range(n):
            p[c] = flat[base + r[c]]
        return
    w0 = taps[d, 0]
    w1 = taps[d, 1]
    w2 = taps[d, 2]
    w3 = taps[d, 3]
    if interior:
        for c in range(n):
            q = base + r[c]
            p[c] = w0[c] * flat[q] + w1[c] * flat[q + 1] + w2[c] * flat[q + W] + w3[c] * flat[q + W + 1]
        return
    for c in range(n):
        i = c // L
        j = c - i * L
        x0 = x + ox[d, i, j]
        y0 = y + oy[d, i, j]
        x1 = x0 + 1 if w1[c] + w3[c] > 0.0 else x0
        y1 = y0 + 1 if w2[c] + w3[c] > 0.0 else y0
        if x0 < 0 or y0 < 0 or x1 > W - 1 or y1 > H - 1:
            p[c] = pad
            continue
        x1 = min(x0 + 1, W - 1)
        y1 = min(y0 + 1, H - 1)
        p[c] = w0[c] * img[y0, x0] + w1[c] * img[y0, x1] + w2[c] * img[y1, x0] + w3[c] * img[y1, x1]


@njit(cache=True, nogil=True)
def pixel_directions(img, flat, x, y, ox, oy, rel, taps, exact, margin, gauss, sg, pad,
                     tau_min, tau_max, rho_min, rho_max, delta_min, delta_max,
                     omega, phi_min, phi_max, r, patch, curve, sc, w_suf, m_suf):
    """Fill ``r`` with the per-direction decisions for pixel ``(x, y)``."""
    H, W = img.shape
    L = gauss.shape[0]
    k = L // 2
    D = r.shape[0]
    for d in range(D):
        r[d] = 0

    # weighted deviations from the centre value, so a constant window
    # reproduces its value exactly despite rounding in the weights
    centre = img[y, x]
    acc = 0.0
    for i in range(L):
        yy = y + i - k
        for j in range(L):
            xx = x + j - k
            if 0 <= yy < H and 0 <= xx < W:
                acc += gauss[i, j] * (img[yy, xx] - centre)
            else:
                acc += gauss[i, j] * (pad - centre)
    acc += centre
    if acc < delta_min or acc > delta_max:
        return

    rough = 0.0
    for yy in range(max(0, y - omega), min(H, y + omega + 1)):
        for xx in range(max(0, x - omega), min(W, x + omega + 1)):
            v = img[yy, xx] - centre
            rough += v * v
    if rough < phi_min or rough > phi_max:
        return

    interior = x - margin >= 0 and y - margin >= 0 and x + margin < W and y + margin < H
    for d in range(D):
        _sample(img, flat, x, y, d, ox, oy, rel, taps, exact, pad, interior, patch)
        _project(patch, curve)
        if _structure(curve, sc, w_suf, m_suf, sg, tau_min, tau_max, rho_min, rho_max):
            r[d] = 1


@njit(cache=True, nogil=True)
def score_directions(r, weights, order):
    """Weighted vote; summed in ascending weight order so any permutation of
    (direction, weight) pairs yields a bit-identical total."""
    total = 0.0
    for q in range(order.shape[0]):
        d = order[q]
        if r[d]:
            total += weights[d]
    best = -1
    for d in range(r.shape[0]):
        if r[d] and (best < 0 or weights[d] > weights[best]):
            best = d
    return total, best


@njit(cache=True, nogil=True)
def scan_rows(img, ys, xs, ox, oy, taps, exact, margin, gauss, sg, weights, order, pad,
              tau_min, tau_max, rho_min, rho_max, delta_min, delta_max,
              omega, phi_min, phi_max, active, scores, best):
    L = gauss.shape[0]
    D = weights.shape[0]
    r = np.zeros(D, dtype=np.int64)
    patch = np.empty((L, L))
    curve = np.empty(L)
    sc = np.empty(L)
    w_suf = np.empty(L + 1)
    m_suf = np.empty(L + 1)
    flat = img.ravel()
    W = img.shape[1]
    rel = np.empty((ox.shape[0], L * L), dtype=np.int64)
    for d in range(ox.shape[0]):
        for i in range(L):
            for j in range(L):
                rel[d, i * L + j] = oy[d, i, j] * W + ox[d, i, j]
    for a in range(ys.shape[0]):
        for b in range(xs.shape[0]):
            if not active[a, b]:
                scores[a, b] = 0.0
                best[a, b] = -1
                continue
            pixel_directions(img, flat, xs[b], ys[a], ox, oy, rel, taps, exact, margin, gauss, sg, pad,
                             tau_min, tau_max, rho_min, rho_max, delta_min, delta_max,
                             omega, phi_min, phi_max, r, patch, curve, sc, w_suf, m_suf)
            s, bd = score_directions(r, weights, order)
            scores[a, b] = s
            best[a, b] = bd
