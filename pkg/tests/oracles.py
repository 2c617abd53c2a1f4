"""Independent brute-force references used to freeze and cross-check values."""
import itertools
import math

import numpy as np


def simplex_grid_min_norm(points, steps=60):
    """Min norm over convex combinations with weights on a simplex lattice."""
    pts = np.asarray(points, float)
    if pts.ndim == 1:
        pts = pts[:, None]
    m = len(pts)
    best = np.inf
    for combo in itertools.product(range(steps + 1), repeat=m - 1):
        s = sum(combo)
        if s > steps:
            continue
        w = np.array(list(combo) + [steps - s]) / steps
        best = min(best, float(np.linalg.norm(w @ pts)))
    return best


def lattice_torus_distance(x, y, shells=2):
    x, y = np.asarray(x, float), np.asarray(y, float)
    best = np.inf
    for k in itertools.product(range(-shells, shells + 1), repeat=x.size):
        best = min(best, float(np.linalg.norm(y + np.array(k) - x)))
    return best


def abs_mixing_singular_grid(step=0.01):
    s = np.arange(-1, 1 + step / 2, step)
    S, T = np.meshgrid(s, s)
    M = np.empty(S.shape + (2, 2))
    M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1] = S, 1, 2, T
    return float(np.linalg.svd(M, compute_uv=False)[..., -1].min())


def polar_density_mass(density, eps, radial=400, angular=256):
    """Integrate a radial density on the eps-disc in polar coordinates."""
    r, wr = np.polynomial.legendre.leggauss(radial)
    r = eps * (r + 1) / 2
    wr = wr * eps / 2
    th = 2 * math.pi * np.arange(angular) / angular
    pts = r[:, None, None] * np.stack([np.cos(th), np.sin(th)], -1)[None]
    vals = density(pts.reshape(-1, 2)).reshape(radial, angular)
    return float(np.sum(vals * (wr * r)[:, None]) * 2 * math.pi / angular)


def rotation_about_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
