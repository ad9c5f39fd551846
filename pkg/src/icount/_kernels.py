"""Hot inner loops of the segmentation pipeline.

Each core function below is written in nopython-compatible style and compiled
with numba when available; setting ICOUNT_DISABLE_NUMBA=1 (or a missing numba
install) selects the identical uncompiled fallback.  Both paths share one
source body, so label maps are bit-identical across backends.

Grids are limited to 4096 px per side: frontier entries are packed into one
int64 key as (zero_density_flag, squared_distance_to_peak, flat_index), which
gives the exact lexicographic pop order with deterministic tie-breaking.
"""

from __future__ import annotations

import os

import numpy as np

DISABLE_ENV = "ICOUNT_DISABLE_NUMBA"
MAX_SIDE = 4096

_FLAT_BITS = 24
_D2_SHIFT = 1 << _FLAT_BITS
_FLAG_SHIFT = 1 << (_FLAT_BITS + 25)
_FLAT_MASK = _D2_SHIFT - 1

# 31-bit LCG: products stay within int64 in compiled code, and plain Python
# integers reduce to the same values, keeping backends in lockstep.
_LCG_A = 1103515245
_LCG_C = 12345
_LCG_M = 2147483648


def expand_core(
    density,
    claimed,
    blocked,
    peak_r,
    peak_c,
    area_lower,
    area_upper,
    count_limit,
    zero_frac_max,
):
    """Grow one region from a seed peak.

    Admits one unclaimed 4-neighbour per step: positive-density pixels first,
    then nearest to the peak; zero-density pixels only while the region holds
    more positive than zero pixels.  Stops when the frontier is exhausted,
    area reaches `area_upper`, the running sum reaches `count_limit`, or the
    zero-density fraction exceeds `zero_frac_max`.

    Every admitted pixel is marked in `blocked` (it can no longer seed a later
    region).  Returns (rows, cols, n_explored, n_keep): the admission sequence
    and the prefix length minimizing the region objective.
    """
    h, w = density.shape
    max_n = area_upper if area_upper < h * w else h * w
    out_r = np.empty(max_n, np.int64)
    out_c = np.empty(max_n, np.int64)
    heap = np.empty(4 * (max_n + 1) + 8, np.int64)
    visited = np.zeros((h, w), np.uint8)

    t_l = float(area_lower)
    c_lim = float(count_limit)

    out_r[0] = peak_r
    out_c[0] = peak_c
    visited[peak_r, peak_c] = 1
    blocked[peak_r, peak_c] = 1
    n = 1
    r_sum = density[peak_r, peak_c]
    fg = 0
    bg = 0
    if density[peak_r, peak_c] > 0.0:
        fg = 1
    else:
        bg = 1

    near = np.ceil(r_sum - 0.5)
    denom = near if near > 1.0 else 1.0
    gap = t_l - 1.0
    if gap < 0.0:
        gap = 0.0
    over = r_sum - c_lim
    if over < 0.0:
        over = 0.0
    best_h = abs(r_sum - near) / denom + gap / t_l + np.ceil(over)
    best_k = 1

    done = False
    if n >= max_n or r_sum >= c_lim:
        done = True
    if bg > zero_frac_max * (fg + bg):
        done = True

    hn = 0
    if not done:
        for d in range(4):
            nr = peak_r + (-1 if d == 0 else (1 if d == 1 else 0))
            nc = peak_c + (-1 if d == 2 else (1 if d == 3 else 0))
            if 0 <= nr < h and 0 <= nc < w:
                if claimed[nr, nc] == 0 and visited[nr, nc] == 0:
                    visited[nr, nc] = 1
                    d2 = (nr - peak_r) * (nr - peak_r) + (nc - peak_c) * (nc - peak_c)
                    key = d2 * _D2_SHIFT + (nr * w + nc)
                    if density[nr, nc] <= 0.0:
                        key += _FLAG_SHIFT
                    heap[hn] = key
                    i = hn
                    hn += 1
                    while i > 0:
                        p = (i - 1) // 2
                        if heap[p] <= heap[i]:
                            break
                        tmp = heap[p]
                        heap[p] = heap[i]
                        heap[i] = tmp
                        i = p

    while hn > 0:
        key = heap[0]
        hn -= 1
        heap[0] = heap[hn]
        i = 0
        while True:
            left = 2 * i + 1
            if left >= hn:
                break
            small = left
            right = left + 1
            if right < hn and heap[right] < heap[left]:
                small = right
            if heap[i] <= heap[small]:
                break
            tmp = heap[i]
            heap[i] = heap[small]
            heap[small] = tmp
            i = small

        if key >= _FLAG_SHIFT and fg <= bg:
            break
        flat = key & _FLAT_MASK
        qr = flat // w
        qc = flat % w

        out_r[n] = qr
        out_c[n] = qc
        n += 1
        r_sum += density[qr, qc]
        if density[qr, qc] > 0.0:
            fg += 1
        else:
            bg += 1
        blocked[qr, qc] = 1

        near = np.ceil(r_sum - 0.5)
        denom = near if near > 1.0 else 1.0
        gap = t_l - n
        if gap < 0.0:
            gap = 0.0
        over = r_sum - c_lim
        if over < 0.0:
            over = 0.0
        h_now = abs(r_sum - near) / denom + gap / t_l + np.ceil(over)
        if h_now < best_h:
            best_h = h_now
            best_k = n

        if n >= max_n or r_sum >= c_lim:
            break
        if bg > zero_frac_max * (fg + bg):
            break

        for d in range(4):
            nr = qr + (-1 if d == 0 else (1 if d == 1 else 0))
            nc = qc + (-1 if d == 2 else (1 if d == 3 else 0))
            if 0 <= nr < h and 0 <= nc < w:
                if claimed[nr, nc] == 0 and visited[nr, nc] == 0:
                    visited[nr, nc] = 1
                    d2 = (nr - peak_r) * (nr - peak_r) + (nc - peak_c) * (nc - peak_c)
                    key = d2 * _D2_SHIFT + (nr * w + nc)
                    if density[nr, nc] <= 0.0:
                        key += _FLAG_SHIFT
                    heap[hn] = key
                    i = hn
                    hn += 1
                    while i > 0:
                        p = (i - 1) // 2
                        if heap[p] <= heap[i]:
                            break
                        tmp = heap[p]
                        heap[p] = heap[i]
                        heap[i] = tmp
                        i = p

    return out_r, out_c, n, best_k


def bg_split_core(labels_flat, height, width, area_upper, next_label, lcg_state):
    """Flood-fill every unlabelled pixel into connected regions of area <= area_upper.

    Seeds are drawn pseudo-randomly from the remaining unlabelled pixels using
    the shared LCG, so both backends produce the same partition for a seed.
    Returns (next_label, lcg_state) after labelling everything.
    """
    size = height * width
    remaining = 0
    for i in range(size):
        if labels_flat[i] < 0:
            remaining += 1
    queue = np.empty(area_upper, np.int64)

    while remaining > 0:
        lcg_state = (_LCG_A * lcg_state + _LCG_C) % _LCG_M
        target = lcg_state % remaining
        seed = -1
        seen = -1
        for i in range(size):
            if labels_flat[i] < 0:
                seen += 1
                if seen == target:
                    seed = i
                    break

        labels_flat[seed] = next_label
        queue[0] = seed
        qt = 1
        qh = 0
        count = 1
        remaining -= 1
        while qh < qt:
            cur = queue[qh]
            qh += 1
            r = cur // width
            c = cur % width
            for d in range(4):
                nr = r + (-1 if d == 0 else (1 if d == 1 else 0))
                nc = c + (-1 if d == 2 else (1 if d == 3 else 0))
                if 0 <= nr < height and 0 <= nc < width:
                    flat = nr * width + nc
                    if labels_flat[flat] < 0 and count < area_upper:
                        labels_flat[flat] = next_label
                        queue[qt] = flat
                        qt += 1
                        count += 1
                        remaining -= 1
        next_label += 1

    return next_label, lcg_state


def lcg_next(state):
    return (_LCG_A * state + _LCG_C) % _LCG_M


def _conv3x3_loops(xp, kernel):
    """3x3 valid convolution over a pre-padded stack; zero taps are skipped,
    so diagonal channel mixes cost a sixth of a dense kernel."""
    n_in, hp, wp = xp.shape
    n_out = kernel.shape[0]
    h = hp - 2
    w = wp - 2
    out = np.zeros((n_out, h, w))
    for oc in range(n_out):
        for ic in range(n_in):
            for u in range(3):
                for v in range(3):
                    kv = kernel[oc, ic, u, v]
                    if kv != 0.0:
                        for y in range(h):
                            for x in range(w):
                                out[oc, y, x] += kv * xp[ic, y + u, x + v]
    return out


def _conv3x3_numpy(xp, kernel):
    """Vectorized twin of _conv3x3_loops (same padded-input contract)."""
    h = xp.shape[1] - 2
    w = xp.shape[2] - 2
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return np.einsum("chwuv,ocuv->ohw", win[:, :h, :w], kernel, optimize=True)


conv3x3_padded = _conv3x3_numpy

expand_core_py = expand_core
bg_split_core_py = bg_split_core

expand_core_nb = None
bg_split_core_nb = None
conv3x3_padded_nb = None


def _numba_requested() -> bool:
    return os.environ.get(DISABLE_ENV, "").strip() in ("", "0")


if _numba_requested():
    try:
        from numba import njit

        expand_core_nb = njit(cache=True)(expand_core_py)
        bg_split_core_nb = njit(cache=True)(bg_split_core_py)
        conv3x3_padded_nb = njit(cache=True)(_conv3x3_loops)
        expand_core = expand_core_nb
        bg_split_core = bg_split_core_nb
        conv3x3_padded = conv3x3_padded_nb
    except ImportError:  # pragma: no cover - depends on environment
        pass


def backend_name() -> str:
    return "numba" if expand_core is not expand_core_py else "numpy"
