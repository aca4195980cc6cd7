"""Independent reference computations used to pin expected values.

These deliberately avoid the library's own code paths: the screened-Poisson
reference assembles the sparse normal equations and solves them directly, and
the warp reference is a scalar double-precision bilinear lookup.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import spsolve


def neumann_laplacian_matrix(h: int, w: int) -> csr_matrix:
    """Positive graph Laplacian of the 4-connected grid (replicate boundary).

    Row i holds deg(i) on the diagonal and -1 for each in-grid neighbor, so
    (L @ img.ravel()) equals -laplacian(img).ravel() for the 5-point stencil
    with replicate padding.
    """
    n = h * w
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for y in range(h):
        for x in range(w):
            i = y * w + x
            deg = 0
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w:
                    deg += 1
                    rows.append(i)
                    cols.append(ny * w + nx)
                    vals.append(-1.0)
            rows.append(i)
            cols.append(i)
            vals.append(float(deg))
    return csr_matrix((vals, (rows, cols)), shape=(n, n))


def direct_screened_poisson(
    processed: np.ndarray, target: np.ndarray, w_c: np.ndarray
) -> np.ndarray:
    """Solve (L + diag(w_c)) o = L p + w_c a exactly, channel by channel."""
    h, w = processed.shape[:2]
    lap = neumann_laplacian_matrix(h, w)
    wc = w_c.astype(np.float64).ravel()
    system = lap + csr_matrix((wc, (range(h * w), range(h * w))), shape=lap.shape)
    planes = processed[:, :, None] if processed.ndim == 2 else processed
    targets = target[:, :, None] if target.ndim == 2 else target
    out = np.empty_like(planes, dtype=np.float64)
    for c in range(planes.shape[2]):
        p = planes[:, :, c].astype(np.float64).ravel()
        a = targets[:, :, c].astype(np.float64).ravel()
        rhs = lap @ p + wc * a
        out[:, :, c] = spsolve(system, rhs).reshape(h, w)
    return out[:, :, 0] if processed.ndim == 2 else out


def direct_poisson_mean_pinned(processed: np.ndarray, mean_value: float) -> np.ndarray:
    """Pure gradient-matching solution (w_c = 0) with the mean pinned.

    The unscreened system is singular up to a constant; solve the dense
    least-squares problem augmented with a mean constraint.
    """
    h, w = processed.shape[:2]
    lap = neumann_laplacian_matrix(h, w).toarray()
    p = processed.astype(np.float64).ravel()
    rows = np.vstack([lap, np.full((1, h * w), 1.0 / (h * w))])
    rhs = np.concatenate([lap @ p, [mean_value]])
    sol, *_ = np.linalg.lstsq(rows, rhs, rcond=None)
    return sol.reshape(h, w)


def bilinear_reference(image: np.ndarray, y: float, x: float) -> float:
    """Scalar clamped bilinear lookup in double precision."""
    h, w = image.shape[:2]
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = y - y0, x - x0
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return float(top * (1 - fy) + bot * fy)


def ssim_reference(a: np.ndarray, b: np.ndarray) -> float:
    """Direct SSIM over explicit 11x11 Gaussian-weighted neighborhoods.

    Pure-python loop over interior pixels; quadratic cost, fine for the tiny
    images used in tests.
    """
    c1 = 0.01**2
    c2 = 0.03**2
    radius = 5
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(coords**2) / (2 * 1.5**2))
    window = np.outer(g, g)
    window /= window.sum()
    h, w = a.shape
    values = []
    for y in range(radius, h - radius):
        for x in range(radius, w - radius):
            pa = a[y - radius : y + radius + 1, x - radius : x + radius + 1].astype(np.float64)
            pb = b[y - radius : y + radius + 1, x - radius : x + radius + 1].astype(np.float64)
            mu_a = (window * pa).sum()
            mu_b = (window * pb).sum()
            var_a = (window * (pa - mu_a) ** 2).sum()
            var_b = (window * (pb - mu_b) ** 2).sum()
            cov = (window * (pa - mu_a) * (pb - mu_b)).sum()
            values.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(values))
