"""Generation and latent-space metrics, histogram export and the metrics JSON schema.

Point sets are rows, shape (n, 2).
"""

from __future__ import annotations

import numpy as np

COVERAGE_MASS = 0.05
SPILL_STDS = 3.0
HIST_BINS = 100


def cluster_geometry(points: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class centroid (k, 2) and RMS distance to the centroid (k,)."""
    classes = np.unique(labels)
    cents = np.stack([points[labels == c].mean(axis=0) for c in classes])
    rms = np.array([np.sqrt(np.mean(np.sum((points[labels == c] - cents[i]) ** 2, axis=1))) for i, c in enumerate(classes)])
    return cents, rms


def assign(samples: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid index and the full distance matrix (n, k)."""
    d = np.sqrt(np.sum((samples[:, None, :] - centroids[None, :, :]) ** 2, axis=2))
    return np.argmin(d, axis=1), d


def generation_metrics(samples: np.ndarray, centroids: np.ndarray, cluster_rms: np.ndarray) -> dict:
    """Mode coverage, per-cluster mass, within-cluster RMS and spill fraction.

    A cluster is covered when at least 5% of the samples are nearest to its
    centroid.  A sample spills when it is farther than 3 RMS radii from
    every centroid.  Non-finite samples count as spilled and unassigned.
    """
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    k = len(centroids)
    ok = np.all(np.isfinite(samples), axis=1)
    good = samples[ok]
    idx, d = assign(good, centroids)
    frac = np.bincount(idx, minlength=k) / max(n, 1)
    within = []
    for c in range(k):
        sel = idx == c
        within.append(float(np.sqrt(np.mean(d[sel, c] ** 2))) if sel.any() else None)
    spilled = np.all(d > SPILL_STDS * cluster_rms[None, :], axis=1)
    return {
        "mode_coverage": float(np.mean(frac >= COVERAGE_MASS)),
        "cluster_fractions": frac.tolist(),
        "within_cluster_rms": within,
        "spill_fraction": float((spilled.sum() + (n - ok.sum())) / max(n, 1)),
    }


def separation_ratio(codes: np.ndarray, labels: np.ndarray) -> float:
    """Smallest distance between class centroids over the largest within-class RMS."""
    cents, rms = cluster_geometry(codes, labels)
    diff = cents[:, None, :] - cents[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    dmin = float(np.min(dist[~np.eye(len(cents), dtype=bool)]))
    spread = float(np.max(rms))
    if spread == 0.0:
        return float("inf") if dmin > 0 else 0.0
    return dmin / spread


def histogram2d(samples: np.ndarray, lim: float, bins: int = HIST_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Counts on a bins x bins grid over [-lim, lim]^2; out-of-range samples are clipped to edge bins.

    Row index follows x0, column index follows x1.  Non-finite samples are
    dropped.
    """
    s = np.asarray(samples, dtype=float)
    s = s[np.all(np.isfinite(s), axis=1)]
    edges = np.linspace(-lim, lim, bins + 1)
    clipped = np.clip(s, -lim, lim)
    counts, _, _ = np.histogram2d(clipped[:, 0], clipped[:, 1], bins=[edges, edges])
    return counts.astype(np.int64), edges


def write_hist_csv(path, counts: np.ndarray, edges: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(f"# bins={counts.shape[0]} lo={float(edges[0])!r} hi={float(edges[-1])!r} rows=x0 cols=x1\n")
        for row in counts:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def write_latent_csv(path, codes: np.ndarray, labels: np.ndarray, points: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("label,z0,z1,x0,x1\n")
        for c, l, x in zip(codes, labels, points):
            fh.write(f"{int(l)},{float(c[0])!r},{float(c[1])!r},{float(x[0])!r},{float(x[1])!r}\n")


_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}

METRICS_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "evaluation metrics",
    "type": "object",
    "required": [
        "method",
        "dataset",
        "sampler",
        "n_samples",
        "diverged",
        "mode_coverage",
        "cluster_fractions",
        "within_cluster_rms",
        "spill_fraction",
        "latent_separation",
        "nll_test",
        "compat_test",
        "hist_total",
    ],
    "properties": {
        "method": {"type": "string"},
        "dataset": {"type": "string"},
        "sampler": {"type": "string"},
        "n_samples": {"type": "integer", "minimum": 1},
        "diverged": {"type": "boolean"},
        "divergence": {"type": ["string", "null"]},
        "mode_coverage": {"type": "number", "minimum": 0, "maximum": 1},
        "cluster_fractions": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "within_cluster_rms": {"type": "array", "items": _NUM_OR_NULL},
        "spill_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "latent_separation": _NUM_OR_NULL,
        "nll_test": _NUM_OR_NULL,
        "compat_test": _NUM_OR_NULL,
        "hist_total": {"type": "integer", "minimum": 0},
    },
}


def validate_metrics(doc: dict) -> None:
    import jsonschema

    jsonschema.validate(doc, METRICS_SCHEMA)
