"""Two-dimensional synthetic datasets with cluster labels.

Points are returned as rows, shape (n, 2), with integer labels (n,).
"""

from __future__ import annotations

import numpy as np

PINWHEEL_ARMS = 5
PINWHEEL_RADIAL_STD = 0.3
PINWHEEL_TANGENTIAL_STD = 0.05
PINWHEEL_RATE = 0.25
PINWHEEL_SCALE = 2.0

GAUSS8_RADIUS = 2.0
GAUSS8_STD = 0.1

DATASETS = ("pinwheel", "8gaussians")


def _balanced_labels(n: int, k: int) -> np.ndarray:
    counts = np.full(k, n // k)
    counts[: n % k] += 1
    return np.repeat(np.arange(k), counts)


def gen_pinwheel(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Five arms at angles 2 pi k / 5, each a Gaussian bent by an angle growing with radius.

    Per arm, the radial coordinate is 1 + N(0, 0.3^2) and the tangential
    one N(0, 0.05^2); the point is rotated by the arm angle plus 0.25 times
    its radial coordinate, then scaled by 2.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, PINWHEEL_ARMS)
    feats = rng.standard_normal((n, 2)) * np.array([PINWHEEL_RADIAL_STD, PINWHEEL_TANGENTIAL_STD])
    feats[:, 0] += 1.0
    angles = 2.0 * np.pi * labels / PINWHEEL_ARMS + PINWHEEL_RATE * feats[:, 0]
    c, s = np.cos(angles), np.sin(angles)
    pts = np.stack([c * feats[:, 0] - s * feats[:, 1], s * feats[:, 0] + c * feats[:, 1]], axis=1)
    order = rng.permutation(n)
    return PINWHEEL_SCALE * pts[order], labels[order]


def gen_8gaussians(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Eight isotropic blobs (std 0.1) centred on the radius-2 circle at angles 2 pi k / 8."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, 8)
    ang = 2.0 * np.pi * labels / 8
    centers = GAUSS8_RADIUS * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    pts = centers + GAUSS8_STD * rng.standard_normal((n, 2))
    order = rng.permutation(n)
    return pts[order], labels[order]


def generate(name: str, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if name == "pinwheel":
        return gen_pinwheel(n, seed)
    if name == "8gaussians":
        return gen_8gaussians(n, seed)
    raise ValueError(f"unknown dataset {name!r}; expected one of {DATASETS}")


def write_points_csv(path, pts: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("x0,x1,label\n")
        for (a, b), l in zip(pts, labels):
            fh.write(f"{float(a)!r},{float(b)!r},{int(l)}\n")


def read_points_csv(path) -> tuple[np.ndarray, np.ndarray]:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return arr[:, :2], arr[:, 2].astype(int)
