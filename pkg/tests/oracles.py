"""Slow, obviously-correct reference implementations used by the tests."""

import numpy as np

from eyewave import mlp


def brute_force_maxima(band, threshold_ratio):
    """Check every cell against the definition; returns (row, col, magnitude) tuples."""
    mag = np.abs(np.asarray(band, dtype=np.float64))
    h, w = mag.shape
    peak = mag.max()
    if peak == 0:
        return []
    found = []
    for r in range(h):
        for c in range(w):
            v = mag[r, c]
            if v < threshold_ratio * peak:
                continue
            strict = True
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if (dr or dc) and 0 <= rr < h and 0 <= cc < w and not v > mag[rr, cc]:
                        strict = False
            if strict:
                found.append((r, c, float(v)))
    found.sort(key=lambda t: (-t[2], t[0], t[1]))
    return found


def indexed_patch(band, row, col, normalize):
    mag = np.abs(np.asarray(band, dtype=np.float64))
    h, w = mag.shape
    out = []
    for r in range(row - 1, row + 2):
        for c in range(col - 1, col + 2):
            out.append(mag[r, c] if 0 <= r < h and 0 <= c < w else 0.0)
    out = np.array(out)
    if normalize and mag.max() > 0:
        out = out / mag.max()
    return out


def finite_difference_gradient(theta, data, h=1e-5):
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fp, _ = mlp._loss_and_grad(theta + e, data)
        fm, _ = mlp._loss_and_grad(theta - e, data)
        grad[i] = (fp - fm) / (2 * h)
    return grad


def random_spd(rng, n):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return q @ np.diag(rng.uniform(0.5, 10.0, n)) @ q.T


def separable_patch_set(n_per_class=40, seed=0):
    """Eyes peak at the patch center; non-eyes are low-magnitude clutter."""
    rng = np.random.default_rng(seed)
    eyes = rng.uniform(0.0, 0.2, (n_per_class, mlp.N_INPUT))
    eyes[:, 4] = rng.uniform(0.8, 1.0, n_per_class)
    others = rng.uniform(0.0, 0.2, (n_per_class, mlp.N_INPUT))
    inputs = np.vstack([eyes, others])
    return mlp.samples_from_arrays(inputs, [True] * n_per_class + [False] * n_per_class)
