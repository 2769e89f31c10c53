"""Dense linear algebra, PCA, k-means and seeded random streams.

Matrices are plain 2-D ``float64`` numpy arrays; :func:`as_matrix` is the
single place where shape and finiteness are validated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError

# rows of the query block processed per chunk in distance computations
_CHUNK = 512


def as_matrix(x, name="matrix") -> np.ndarray:
    """Return ``x`` as a finite 2-D float64 array or raise."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains NaN or Inf")
    return arr


def seeded_rng(seed) -> np.random.Generator:
    """Deterministic random stream (PCG64) for ``seed``.

    PCG64 and the SeedSequence expansion are fixed algorithms, so the draw
    sequence is identical across runs and platforms.  A generator is passed
    through unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class PcaBasis:
    components: np.ndarray  # (p, d), orthonormal rows
    eigenvalues: np.ndarray  # (p,), non-increasing
    mean: np.ndarray  # (d,)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


@dataclass(frozen=True)
class Clustering:
    centroids: np.ndarray
    assignment: np.ndarray
    objective: float
    history: list = field(default_factory=list)


def _round_robin(m):
    """Pairings for one cyclic sweep: m - 1 rounds of m // 2 disjoint pairs."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        rounds.append([(players[i], players[m - 1 - i]) for i in range(m // 2)])
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def symmetric_eigh(a, tol=1e-15, max_sweeps=60):
    """Eigendecomposition of a symmetric matrix by parallel-order Jacobi.

    Each round applies m/2 disjoint plane rotations at once, so a sweep costs
    m - 1 vectorised rounds instead of m(m-1)/2 scalar rotations.

    Returns ``(eigenvalues, eigenvectors)`` sorted by non-increasing
    eigenvalue; eigenvectors are the columns.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n > 1:
        m = n + (n % 2)
        schedule = []
        for pairs in _round_robin(m):
            pairs = [(p, q) for p, q in pairs if p < n and q < n]
            schedule.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        scale = np.linalg.norm(a)
        for _ in range(max_sweeps):
            off = np.linalg.norm(a - np.diag(np.diag(a)))
            if off <= tol * scale or scale == 0.0:
                break
            for p, q in schedule:
                apq = a[p, q]
                if not np.any(apq):
                    continue
                # smaller root of t^2 + 2 tau t - 1 = 0 keeps |angle| <= pi/4
                nz = apq != 0.0
                tau = np.where(nz, (a[q, q] - a[p, p]) / np.where(nz, 2.0 * apq, 1.0), 0.0)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                t = np.where(nz, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c[:, None] * ap - s[:, None] * aq
                a[q, :] = s[:, None] * ap + c[:, None] * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def _fix_signs(components):
    """Flip each row so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def basis_from_moment(moment, p, mean) -> PcaBasis:
    """Top-``p`` eigenpairs of a symmetric moment matrix as a PcaBasis."""
    w, vecs = symmetric_eigh(moment)
    components = _fix_signs(vecs[:, :p].T.copy())
    eigenvalues = np.maximum(w[:p], 0.0)
    return PcaBasis(components=components, eigenvalues=eigenvalues, mean=np.asarray(mean, dtype=np.float64))


def pca_fit(X, p, center=True) -> PcaBasis:
    """Principal components of ``X`` from its explicit covariance.

    With ``center=False`` the uncentered second moment ``X^T X / n`` is
    decomposed instead and the returned mean is zero.
    """
    X = as_matrix(X, "X")
    n, d = X.shape
    if p > d:
        raise DimensionError(f"p={p} exceeds the number of columns {d}")
    if p < 1:
        raise ParameterError("p must be at least 1")
    if n < 2:
        raise DimensionError("pca_fit needs at least two rows")
    if center:
        mean = X.mean(axis=0)
        Xc = X - mean
        moment = Xc.T @ Xc / (n - 1)
    else:
        mean = np.zeros(d)
        moment = X.T @ X / n
    return basis_from_moment(moment, p, mean)


def project(X, basis: PcaBasis) -> np.ndarray:
    X = as_matrix(X, "X")
    if X.shape[1] != basis.components.shape[1]:
        raise DimensionError(
            f"X has {X.shape[1]} columns but the basis expects {basis.components.shape[1]}"
        )
    return (X - basis.mean) @ basis.components.T


def sq_distances(a, b) -> np.ndarray:
    """All-pairs squared Euclidean distances from explicit differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]))
    step = max(1, _CHUNK * 64 // max(1, b.shape[0]))
    for start in range(0, a.shape[0], step):
        diff = a[start:start + step, None, :] - b[None, :, :]
        out[start:start + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def nearest(a, b):
    """Index of, and squared distance to, the nearest row of ``b`` for each row of ``a``.

    Ties resolve to the lowest index of ``b``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    idx = np.empty(a.shape[0], dtype=np.int64)
    dist = np.empty(a.shape[0])
    step = max(1, _CHUNK * 64 // max(1, b.shape[0]))
    for start in range(0, a.shape[0], step):
        d2 = sq_distances(a[start:start + step], b)
        j = np.argmin(d2, axis=1)
        idx[start:start + step] = j
        dist[start:start + step] = d2[np.arange(len(j)), j]
    return idx, dist


def _kmeans_pp(points, k, rng):
    n = points.shape[0]
    centers = [int(rng.integers(n))]
    d2 = sq_distances(points, points[centers[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        centers.append(nxt)
        d2 = np.minimum(d2, sq_distances(points, points[nxt][None, :])[:, 0])
    return points[centers].copy()


def kmeans(points, n_cluster, seed=0, max_iter=100, rel_tol=1e-6) -> Clustering:
    """Lloyd's algorithm with k-means++ seeding.

    An empty cluster is re-seeded at the point farthest from its assigned
    centroid (lowest index on ties, never reusing a point in one update).
    """
    points = as_matrix(points, "points")
    n = points.shape[0]
    if n_cluster < 1 or n_cluster > n:
        raise ParameterError(f"n_cluster={n_cluster} must be in [1, {n}]")
    rng = seeded_rng(seed)
    centroids = _kmeans_pp(points, n_cluster, rng)
    assignment, d2 = nearest(points, centroids)
    objective = float(d2.sum())
    history = [objective]
    for _ in range(max_iter):
        sums = np.zeros_like(centroids)
        np.add.at(sums, assignment, points)
        counts = np.bincount(assignment, minlength=n_cluster)
        new_centroids = centroids.copy()
        filled = counts > 0
        new_centroids[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            far = np.argsort(-d2, kind="stable")
            used = 0
            for c in np.flatnonzero(~filled):
                new_centroids[c] = points[far[used]]
                used += 1
        centroids = new_centroids
        assignment, d2 = nearest(points, centroids)
        new_objective = float(d2.sum())
        history.append(new_objective)
        converged = objective - new_objective <= rel_tol * objective
        objective = new_objective
        if converged:
            break
    return Clustering(centroids=centroids, assignment=assignment, objective=objective, history=history)
