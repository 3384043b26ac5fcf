"""Independent reference implementations used as test oracles.

These stay deliberately naive (per-node loops, explicit counters, exhaustive
enumeration) and never share code with the package paths they check.
"""

from __future__ import annotations

import itertools

import numpy as np

PAD = 10 ** 9


def brute_force_masked_conv(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    in_index: np.ndarray,
    out_index: np.ndarray,
    in_groups: np.ndarray,
    out_groups: np.ndarray,
    strict: bool = True,
) -> np.ndarray:
    """Per-node sequential convolution that zeroes non-causal taps.

    x: (C_in, H, W); weight: (C_out, C_in, K, K); in_index: (G_in, H, W);
    out_index: (G_out, H, W). Zero padding; padded taps are never causal.
    """
    c_in, h, w = x.shape
    c_out = weight.shape[0]
    k = weight.shape[-1]
    r = k // 2
    out = np.zeros((c_out, h, w), dtype=np.float64)
    for oc in range(c_out):
        t_out_row = out_index[out_groups[oc]]
        for i in range(h):
            for j in range(w):
                acc = float(bias[oc])
                t_out = t_out_row[i, j]
                for ic in range(c_in):
                    t_in_row = in_index[in_groups[ic]]
                    for dj in range(-r, r + 1):
                        for dk in range(-r, r + 1):
                            ii, jj = i + dj, j + dk
                            if not (0 <= ii < h and 0 <= jj < w):
                                continue
                            t_in = t_in_row[ii, jj]
                            keep = t_in < t_out if strict else t_in <= t_out
                            if keep:
                                acc += weight[oc, ic, dj + r, dk + r] * x[ic, ii, jj]
                out[oc, i, j] = acc
    return out


def counting_conv(x: np.ndarray, weight: np.ndarray) -> tuple[np.ndarray, int]:
    """Dense valid-padding-free convolution that counts every multiply."""
    c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    r = k // 2
    out = np.zeros((c_out, h, w))
    multiplies = 0
    for oc in range(c_out):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for ic in range(c_in):
                    for dj in range(-r, r + 1):
                        for dk in range(-r, r + 1):
                            ii, jj = i + dj, j + dk
                            val = x[ic, ii, jj] if 0 <= ii < h and 0 <= jj < w else 0.0
                            acc += weight[oc, ic, dj + r, dk + r] * val
                            multiplies += 1
                out[oc, i, j] = acc
    return out, multiplies


def counting_transposed_conv_multiplies(
    c_in: int, c_out: int, k: int, h_in: int, w_in: int
) -> int:
    """Multiply count of a stride-s transposed conv: one per weight application."""
    multiplies = 0
    for _ in range(h_in):
        for _ in range(w_in):
            multiplies += c_in * c_out * k * k
    return multiplies


def softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def enumerate_vimco_gradient(logits: np.ndarray, log_liks: np.ndarray, m: int) -> np.ndarray:
    """Exact gradient of E_{q^M}[log(1/M sum exp(l_i))] w.r.t. the logits.

    Enumerates all |K|^M outcome tuples of the categorical q = softmax(logits).
    """
    q = softmax(logits)
    k = len(logits)
    grad = np.zeros(k)
    for tup in itertools.product(range(k), repeat=m):
        prob = np.prod([q[i] for i in tup])
        bound = np.log(np.mean([np.exp(log_liks[i]) for i in tup]))
        score = np.zeros(k)
        for i in tup:
            onehot = np.zeros(k)
            onehot[i] = 1.0
            score += onehot - q
        grad += prob * bound * score
    return grad


def trapezoid_bd_rate(curve_a: np.ndarray, curve_b: np.ndarray, samples: int = 4000) -> float:
    """BD-rate via piecewise-linear log-rate interpolation and trapezoids."""
    qa = curve_a[:, 1]
    ra = np.log(curve_a[:, 0])
    qb = curve_b[:, 1]
    rb = np.log(curve_b[:, 0])
    ia, ib = np.argsort(qa), np.argsort(qb)
    qa, ra, qb, rb = qa[ia], ra[ia], qb[ib], rb[ib]
    lo = max(qa.min(), qb.min())
    hi = min(qa.max(), qb.max())
    grid = np.linspace(lo, hi, samples)
    fa = np.interp(grid, qa, ra)
    fb = np.interp(grid, qb, rb)
    int_a = np.trapezoid(fa, grid)
    int_b = np.trapezoid(fb, grid)
    avg = (int_b - int_a) / (hi - lo)
    return float((np.exp(avg) - 1.0) * 100.0)


def table_entropy_bits(freqs: np.ndarray, symbols: np.ndarray, table_ids: np.ndarray) -> float:
    """Ideal code length in bits of symbols under their quantized tables."""
    total = freqs.sum(axis=-1, keepdims=True)
    p = freqs / total
    return float(-np.log2(p[table_ids, symbols]).sum())
