"""K-Means, DBSCAN, silhouette, k-distance curves and a 2-D PCA projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

NOISE = -1
GRID_INDEX_ABOVE = 5_000


# --------------------------------------------------------------------------- k-means

@dataclass(frozen=True)
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    labels: np.ndarray
    k: int
    n_init: int = 10
    max_iter: int = 300
    seed: int = 0
    n_iter: int = 0

    def predict(self, X) -> np.ndarray:
        return _sq_dists(np.asarray(X, dtype=float), self.centroids).argmin(axis=1)

    def to_dict(self):
        return {"centroids": self.centroids.tolist(), "inertia": self.inertia, "k": self.k,
                "n_init": self.n_init, "max_iter": self.max_iter, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        """Training labels are not persisted; use :meth:`predict`."""
        return cls(np.asarray(d["centroids"], dtype=float), float(d["inertia"]), np.zeros(0, dtype=np.int64),
                   int(d["k"]), int(d["n_init"]), int(d["max_iter"]), int(d["seed"]))


def _sq_dists(X, C):
    d = np.zeros((X.shape[0], C.shape[0]))
    for j in range(X.shape[1]):
        d += (X[:, j, None] - C[None, :, j]) ** 2
    return d


def kmeans_plusplus(X, k, rng) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return np.array(centers, dtype=float)


def _assign(d, k):
    """Nearest centroid; an empty cluster takes the farthest point of the largest one."""
    labels = d.argmin(axis=1)
    counts = np.bincount(labels, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        labels[members[np.argmax(d[members, big])]] = empty
        counts = np.bincount(labels, minlength=k)
    return labels


def lloyd(X, centroids, max_iter: int = 300, trace: list | None = None):
    """Lloyd iterations to an assignment fixpoint; empty clusters steal the
    farthest point of the largest cluster. Returns (centroids, labels, inertia, n_iter)."""
    C = np.array(centroids, dtype=float)
    k = C.shape[0]
    labels = None
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, C)
        new = _assign(d, k)
        if trace is not None:
            trace.append(float(d[np.arange(X.shape[0]), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            C[j] = X[labels == j].mean(axis=0)
    d = _sq_dists(X, C)
    labels = _assign(d, k)
    inertia = float(d[np.arange(X.shape[0]), labels].sum())
    return C, labels, inertia, it


def kmeans_fit(X, k: int = 3, n_init: int = 10, max_iter: int = 300, seed: int = 0,
               extra_inits=()) -> KMeansModel:
    """Best of ``n_init`` k-means++ starts by inertia (plus any explicit starting centroids)."""
    X = np.asarray(getattr(X, "values", X), dtype=float)
    n = X.shape[0]
    if n < k:
        raise ValueError(f"k-means needs at least k={k} rows, got {n}")
    best = None
    starts = [kmeans_plusplus(X, k, np.random.default_rng(s))
              for s in np.random.SeedSequence(seed).spawn(n_init)]
    starts.extend(np.asarray(c, dtype=float) for c in extra_inits)
    for init in starts:
        C, labels, inertia, it = lloyd(X, init, max_iter)
        if best is None or inertia < best[2]:
            best = (C, labels, inertia, it)
    C, labels, inertia, it = best
    return KMeansModel(C, inertia, labels, k, n_init, max_iter, seed, it)


def elbow_curve(X, k_range=range(1, 11), n_init: int = 10, max_iter: int = 300, seed: int = 0) -> dict:
    """Inertia per k. Each fit also starts from the previous best centroids plus one
    k-means++ style addition, so the curve cannot increase."""
    X = np.asarray(getattr(X, "values", X), dtype=float)
    ks = sorted(k_range)
    if ks and ks[-1] > X.shape[0]:
        raise ValueError("largest k exceeds the number of rows")
    out = {}
    prev = None
    for k in ks:
        extra = []
        if prev is not None and prev.k == k - 1:
            d = _sq_dists(X, prev.centroids).min(axis=1)
            extra.append(np.vstack([prev.centroids, X[int(np.argmax(d))]]))
        model = kmeans_fit(X, k, n_init, max_iter, seed, extra)
        out[k] = model.inertia
        prev = model
    return out


# --------------------------------------------------------------------------- silhouette

def silhouette(X, labels, sample_size: int | None = 2000, seed: int = 0) -> float:
    """Mean silhouette (b - a) / max(a, b); singleton-cluster points score 0."""
    X = np.asarray(getattr(X, "values", X), dtype=float)
    labels = np.asarray(labels)
    if sample_size is not None and X.shape[0] > sample_size:
        rows = np.sort(np.random.default_rng(seed).choice(X.shape[0], sample_size, replace=False))
        X, labels = X[rows], labels[rows]
    uniq, lab = np.unique(labels, return_inverse=True)
    if uniq.size < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    D = np.sqrt(np.maximum(_sq_dists(X, X), 0.0))
    sums = np.zeros((X.shape[0], uniq.size))
    for c in range(uniq.size):
        sums[:, c] = D[:, lab == c].sum(axis=1)
    sizes = np.bincount(lab, minlength=uniq.size).astype(float)
    own = sizes[lab]
    rows = np.arange(X.shape[0])
    a = np.where(own > 1, sums[rows, lab] / np.maximum(own - 1, 1), 0.0)
    mean_other = sums / sizes
    mean_other[rows, lab] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


# --------------------------------------------------------------------------- DBSCAN

@dataclass(frozen=True)
class DbscanResult:
    labels: np.ndarray
    core: np.ndarray
    eps: float
    min_samples: int

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max() + 1) if self.labels.size else 0

    @property
    def noise_fraction(self) -> float:
        return float(np.mean(self.labels == NOISE)) if self.labels.size else 0.0


def _pair_sq_dists(X, i, j):
    d2 = np.zeros(i.size)
    for c in range(X.shape[1]):
        d2 += (X[i, c] - X[j, c]) ** 2
    return d2


def _cross_sq_dists(A, B):
    """Squared distances between every row of A and every row of B, same arithmetic as pairs."""
    d2 = np.zeros((A.shape[0], B.shape[0]))
    for c in range(A.shape[1]):
        d2 += (A[:, c, None] - B[None, :, c]) ** 2
    return d2


def _pairs_naive(X, eps, chunk=256):
    """All pairs i < j with squared distance <= eps**2 by exhaustive scan."""
    n = X.shape[0]
    eps2 = eps * eps
    out_i, out_j, out_d = [], [], []
    for s in range(0, n, chunk):
        d2 = _cross_sq_dists(X[s:s + chunk], X)
        r, cidx = np.nonzero(d2 <= eps2)
        gi = r + s
        keep = cidx > gi
        out_i.append(gi[keep])
        out_j.append(cidx[keep])
        out_d.append(d2[r[keep], cidx[keep]])
    if not out_i:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    return np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_d)


def _dbscan_pairs(X, eps, min_samples):
    n = X.shape[0]
    i, j, d2 = _pairs_naive(X, eps)
    counts = 1 + np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    core = counts >= min_samples
    labels = np.full(n, NOISE, dtype=np.int64)
    core_idx = np.flatnonzero(core)
    if core_idx.size:
        both = core[i] & core[j]
        pos = np.full(n, -1, dtype=np.int64)
        pos[core_idx] = np.arange(core_idx.size)
        graph = coo_matrix((np.ones(int(both.sum())), (pos[i[both]], pos[j[both]])),
                           shape=(core_idx.size, core_idx.size))
        _, comp = connected_components(graph, directed=False)
        labels[core_idx] = comp
        # border points: nearest core neighbour, ties to the lower core index
        bi = np.concatenate([i[core[j] & ~core[i]], j[core[i] & ~core[j]]])
        bc = np.concatenate([j[core[j] & ~core[i]], i[core[i] & ~core[j]]])
        bd = np.concatenate([d2[core[j] & ~core[i]], d2[core[i] & ~core[j]]])
        if bi.size:
            order = np.lexsort((bc, bd, bi))
            bi, bc = bi[order], bc[order]
            first = np.ones(bi.size, dtype=bool)
            first[1:] = bi[1:] != bi[:-1]
            labels[bi[first]] = labels[bc[first]]
    return labels, core


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _cell_offsets(d):
    """Integer cell offsets (lexicographically positive) whose cells can hold points within eps."""
    reach = 1 + int(np.floor(np.sqrt(d)))
    grids = np.stack(np.meshgrid(*[np.arange(-reach, reach + 1)] * d, indexing="ij"), -1).reshape(-1, d)
    gap = np.maximum(np.abs(grids) - 1, 0)
    ok = (gap * gap).sum(axis=1) <= d + 1e-6
    nz = grids != 0
    first_nz = np.where(nz.any(axis=1), grids[np.arange(len(grids)), np.argmax(nz, axis=1)], 0)
    return grids[ok & (first_nz > 0)]


def _any_within(A, B, eps):
    """True when some row of A lies within eps of some row of B (exact squared-distance test)."""
    eps2 = eps * eps
    if np.any(_cross_sq_dists(A[:64], B[:64]) <= eps2):
        return True
    if A.shape[0] * B.shape[0] <= 4_000_000:
        return bool(np.any(_cross_sq_dists(A, B) <= eps2))
    if A.shape[0] > B.shape[0]:
        A, B = B, A
    k = min(4, B.shape[0])
    dist, idx = cKDTree(B).query(A, k=k, distance_upper_bound=eps * (1.0 + 1e-9))
    dist, idx = dist.reshape(A.shape[0], k), idx.reshape(A.shape[0], k)
    rows, cols = np.nonzero(np.isfinite(dist))
    return bool(rows.size) and bool(np.any(_pair_sq_dists(np.vstack([A, B]), rows, A.shape[0] + idx[rows, cols]) <= eps2))


def _dbscan_grid(X, eps, min_samples):
    """Uniform-grid DBSCAN with the same core/border semantics as the exhaustive path.

    Cells have side eps/sqrt(d), so any two points sharing a cell are neighbours:
    a cell holding min_samples points makes all of them core without a search.
    """
    n, d = X.shape
    eps2 = eps * eps
    side = eps / np.sqrt(d) * (1.0 - 1e-9)
    cells = np.floor(X / side).astype(np.int64)
    cells -= cells.min(axis=0)
    extent = cells.max(axis=0) + 1
    if float(np.prod(extent.astype(float))) > 2.0 ** 62:
        raise ValueError("grid index extent too large for eps; use index='naive'")
    stride = np.concatenate([np.cumprod(extent[::-1])[::-1][1:], [1]]).astype(np.int64)
    keys = cells @ stride
    ukeys, cell_of, cell_count = np.unique(keys, return_inverse=True, return_counts=True)
    cell_of = cell_of.ravel()
    order = np.argsort(cell_of, kind="stable")
    starts = np.concatenate([[0], np.cumsum(cell_count)])

    core = (cell_count >= min_samples)[cell_of]
    tree = cKDTree(X)
    sparse = np.flatnonzero(~core)
    if sparse.size:
        hi = tree.query_ball_point(X[sparse], eps * (1.0 + 1e-9), return_length=True)
        lo = tree.query_ball_point(X[sparse], eps * (1.0 - 1e-9), return_length=True)
        counts = np.asarray(hi).copy()
        for k in np.flatnonzero(np.asarray(lo) != np.asarray(hi)):
            cand = np.asarray(tree.query_ball_point(X[sparse[k]], eps * (1.0 + 1e-9)), dtype=np.int64)
            counts[k] = int(np.sum(_pair_sq_dists(X, np.full(cand.size, sparse[k]), cand) <= eps2))
        core[sparse] = counts >= min_samples

    labels = np.full(n, NOISE, dtype=np.int64)
    core_idx = np.flatnonzero(core)
    if not core_idx.size:
        return labels, core

    members = [None] * ukeys.size

    def core_members(c):
        if members[c] is None:
            m = order[starts[c]:starts[c + 1]]
            members[c] = X[m[core[m]]]
        return members[c]

    core_cells = np.unique(cell_of[core_idx])
    is_core_cell = np.zeros(ukeys.size, dtype=bool)
    is_core_cell[core_cells] = True
    cc = cells[order[starts[core_cells]]]
    pa, pb = [], []
    for off in _cell_offsets(d):
        nb = cc + off
        inside = np.all((nb >= 0) & (nb < extent), axis=1)
        nkeys = nb[inside] @ stride
        pos = np.searchsorted(ukeys, nkeys)
        pos = np.minimum(pos, ukeys.size - 1)
        hit = (ukeys[pos] == nkeys) & is_core_cell[pos]
        pa.append(core_cells[inside][hit])
        pb.append(pos[hit])
    pa, pb = np.concatenate(pa), np.concatenate(pb)
    # near pairs first so merges happen before the expensive far checks
    uf = _UnionFind(ukeys.size)
    for a, b in zip(pa.tolist(), pb.tolist()):
        if uf.find(a) != uf.find(b) and _any_within(core_members(a), core_members(b), eps):
            uf.union(a, b)
    root = np.array([uf.find(c) for c in range(ukeys.size)])
    labels[core_idx] = root[cell_of[core_idx]]

    other = np.flatnonzero(~core)
    if other.size:
        k = min(8, core_idx.size)
        dist, idx = cKDTree(X[core_idx]).query(X[other], k=k, distance_upper_bound=eps * (1.0 + 1e-9))
        dist, idx = dist.reshape(other.size, k), idx.reshape(other.size, k)
        valid = np.isfinite(dist)
        cand = core_idx[np.where(valid, idx, 0)]
        d2 = np.zeros(dist.shape)
        for c in range(d):
            d2 += (X[other, c][:, None] - X[cand, c]) ** 2
        d2 = np.where(valid & (d2 <= eps2), d2, np.inf)
        best = d2.min(axis=1)
        has = np.isfinite(best)
        tie = np.where(d2 == best[:, None], cand, n).min(axis=1)
        labels[other[has]] = labels[tie[has]]
    return labels, core


def dbscan(X, eps: float = 0.25, min_samples: int = 5, index: str = "auto") -> DbscanResult:
    """Density clustering with inclusive eps-balls that count the point itself.

    Border points join the cluster of their nearest core neighbour; cluster ids
    are ordered by each cluster's lowest member row index.
    """
    X = np.asarray(getattr(X, "values", X), dtype=float)
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")
    if index not in ("auto", "grid", "naive"):
        raise ValueError(f"unknown index {index!r}")
    n = X.shape[0]
    if n == 0:
        return DbscanResult(np.zeros(0, int), np.zeros(0, bool), eps, min_samples)
    use_grid = index == "grid" or (index == "auto" and n > GRID_INDEX_ABOVE)
    labels, core = (_dbscan_grid if use_grid else _dbscan_pairs)(X, eps, min_samples)

    # relabel by lowest member row index
    clustered = labels >= 0
    if clustered.any():
        old = labels[clustered]
        uniq, inv = np.unique(old, return_inverse=True)
        lowest = np.full(uniq.size, n, dtype=np.int64)
        np.minimum.at(lowest, inv.ravel(), np.flatnonzero(clustered))
        rank = np.empty(uniq.size, dtype=np.int64)
        rank[np.argsort(lowest, kind="stable")] = np.arange(uniq.size)
        labels[clustered] = rank[inv.ravel()]
    return DbscanResult(labels, core, eps, min_samples)


def k_distance(X, k: int = 5) -> np.ndarray:
    """Ascending distances from each row to its k-th nearest other row."""
    X = np.asarray(getattr(X, "values", X), dtype=float)
    n = X.shape[0]
    if n <= k:
        raise ValueError(f"k-distance needs more than k={k} rows, got {n}")
    d, _ = cKDTree(X).query(X, k=k + 1)
    return np.sort(d[:, k])


# --------------------------------------------------------------------------- PCA

def jacobi_eigh(A, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues descending, eigenvectors as columns).
    """
    A = np.array(A, dtype=float)
    m = A.shape[0]
    V = np.eye(m)
    scale = max(np.abs(A).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                R = np.eye(m)
                R[p, p] = R[q, q] = c
                R[p, q], R[q, p] = s, -s
                A = R.T @ A @ R
                V = V @ R
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (2, d), orthonormal rows
    explained_variance: np.ndarray
    total_variance: float

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) @ self.components.T

    def to_dict(self):
        return {"mean": self.mean.tolist(), "components": self.components.tolist(),
                "explained_variance": self.explained_variance.tolist(), "total_variance": self.total_variance}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["components"], dtype=float),
                   np.asarray(d["explained_variance"], dtype=float), float(d["total_variance"]))


def pca_project(X, n_components: int = 2):
    """Top eigen-directions of the population covariance; each component's
    largest-magnitude coordinate is made positive."""
    X = np.asarray(getattr(X, "values", X), dtype=float)
    if X.shape[0] < 2:
        raise ValueError("PCA needs at least 2 rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / X.shape[0]
    w, V = jacobi_eigh(cov)
    w = np.maximum(w, 0.0)
    comps = V[:, :n_components].T.copy()
    for r in comps:
        if r[np.argmax(np.abs(r))] < 0:
            r *= -1.0
    model = PcaModel(mean, comps, w[:n_components], float(w.sum()))
    return model, Xc @ comps.T
