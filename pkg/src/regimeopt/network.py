"""TMFG information-filtering networks and LoGo sparse inverse covariance.

The TMFG is a planar chordal graph with 3n-6 edges built greedily from a
similarity matrix: start from the best tetrahedron, then repeatedly insert the
remaining vertex that maximizes similarity to one of the current triangular
faces, splitting that face in three.  Its clique/separator structure (4-cliques
and 3-separators) supports local-global (LoGo) inversion: the sparse precision
is the clique-wise sum of inverted 4x4 sub-covariances minus the inverted 3x3
separator sub-covariances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import EstimationError, ValidationError

# exact tetrahedron search is O(n^4); above this size fall back to a greedy
# row-sum seed (structure and counts are unaffected, only the seed choice)
_EXACT_SEED_MAX_N = 35


@dataclass(frozen=True)
class FilteringNetwork:
    n: int
    edges: frozenset  # frozenset of (u, v) tuples, u < v
    cliques: tuple  # 4-vertex tuples, insertion order, each sorted
    separators: tuple  # 3-vertex tuples, insertion order, each sorted

    def edge_array(self) -> np.ndarray:
        return np.array(sorted(self.edges), dtype=np.int64).reshape(-1, 2)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=bool)
        for u, v in self.edges:
            adj[u, v] = adj[v, u] = True
        return adj


@dataclass(frozen=True)
class SparsePrecision:
    """Symmetric PD matrix whose off-diagonal support is a TMFG edge set."""

    n: int
    matrix: np.ndarray  # dense (n, n) with exact zeros off the support
    network: FilteringNetwork
    ridge_events: tuple = field(default=())


@lru_cache(maxsize=8)
def _four_subsets(n: int) -> np.ndarray:
    return np.array(list(combinations(range(n), 4)), dtype=np.int64)


def _seed_clique(w: np.ndarray) -> list[int]:
    n = w.shape[0]
    if n <= _EXACT_SEED_MAX_N:
        quads = _four_subsets(n)
        total = np.zeros(len(quads))
        for a, b in combinations(range(4), 2):
            total += w[quads[:, a], quads[:, b]]
        return sorted(quads[int(np.argmax(total))].tolist())
    # greedy: 4 vertices with the largest total similarity, ties to low index
    score = w.sum(axis=1)
    order = np.lexsort((np.arange(n), -score))
    return sorted(int(v) for v in order[:4])


def build_tmfg(similarity: np.ndarray) -> FilteringNetwork:
    """Greedy TMFG construction; deterministic with ties broken by lowest
    (vertex, face-creation-order)."""
    w = np.asarray(similarity, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValidationError("similarity must be a square matrix")
    n = w.shape[0]
    if n < 4:
        raise ValidationError(f"TMFG needs at least 4 vertices, got {n}")
    if not np.all(np.isfinite(w)):
        raise ValidationError("similarity entries must be finite")
    if not np.allclose(w, w.T, atol=1e-10):
        raise ValidationError("similarity matrix must be symmetric")
    w = w.copy()
    np.fill_diagonal(w, 0.0)

    seed = _seed_clique(w)
    edges = {tuple(sorted(p)) for p in combinations(seed, 2)}
    cliques = [tuple(seed)]
    separators: list[tuple] = []
    faces = [tuple(sorted(f)) for f in combinations(seed, 3)]
    remaining = sorted(set(range(n)) - set(seed))

    while remaining:
        rem = np.array(remaining, dtype=np.int64)
        face_arr = np.array(faces, dtype=np.int64)
        gains = w[rem[:, None], face_arr.T[None, 0]]
        gains = gains + w[rem[:, None], face_arr.T[None, 1]]
        gains = gains + w[rem[:, None], face_arr.T[None, 2]]
        # row-major argmax: lowest vertex first, then earliest-created face
        flat = int(np.argmax(gains))
        vi, fi = divmod(flat, len(faces))
        v = int(rem[vi])
        face = faces[fi]

        for u in face:
            edges.add((min(u, v), max(u, v)))
        cliques.append(tuple(sorted((v, *face))))
        separators.append(face)
        faces.pop(fi)
        faces.extend(tuple(sorted((v, a, b))) for a, b in combinations(face, 2))
        remaining.remove(v)

    return FilteringNetwork(
        n=n,
        edges=frozenset(edges),
        cliques=tuple(cliques),
        separators=tuple(separators),
    )


def _inverted_block(cov: np.ndarray, idx: tuple, ridge_eps: float):
    """Invert a small clique/separator sub-covariance, ridging if singular."""
    block = cov[np.ix_(idx, idx)]
    ridged = False
    try:
        np.linalg.cholesky(block)
    except np.linalg.LinAlgError:
        block = block + ridge_eps * np.eye(len(idx))
        ridged = True
    try:
        return np.linalg.inv(block), ridged
    except np.linalg.LinAlgError as exc:
        raise EstimationError(f"singular sub-covariance on clique {idx}") from exc


def _batched_blocks(cov: np.ndarray, groups: tuple) -> np.ndarray:
    idx = np.array(groups, dtype=np.int64)
    return cov[idx[:, :, None], idx[:, None, :]]


def logo_precision(sample_cov: np.ndarray, net: FilteringNetwork) -> SparsePrecision:
    """Assemble the LoGo sparse precision from 4-clique and 3-separator inverses."""
    cov = np.asarray(sample_cov, dtype=float)
    if cov.shape != (net.n, net.n):
        raise ValidationError("covariance size does not match network")
    if not np.allclose(cov, cov.T, atol=1e-8):
        raise ValidationError("covariance must be symmetric")
    ridge_eps = 1e-10 * np.trace(cov) / net.n
    j = np.zeros_like(cov)
    events = []
    for groups, sign in ((net.cliques, 1.0), (net.separators, -1.0)):
        if not groups:
            continue
        blocks = _batched_blocks(cov, groups)
        try:
            chol = np.linalg.cholesky(blocks)
            invs = np.linalg.inv(blocks)
            # scale-aware singularity check on the Cholesky pivots:
            # near-zero pivots invert "successfully" but explosively
            pivots = np.einsum("gii->gi", chol) ** 2
            for g in np.flatnonzero((pivots <= ridge_eps).any(axis=1)):
                size = len(groups[g])
                invs[g] = np.linalg.inv(blocks[g] + ridge_eps * np.eye(size))
                events.append(groups[g])
        except np.linalg.LinAlgError:
            # slow path: ridge only the offending blocks
            invs = np.empty_like(blocks)
            for g, group in enumerate(groups):
                invs[g], ridged = _inverted_block(cov, group, ridge_eps)
                if ridged:
                    events.append(group)
        idx = np.array(groups, dtype=np.int64)
        np.add.at(j, (idx[:, :, None], idx[:, None, :]), sign * invs)
    j = 0.5 * (j + j.T)
    return SparsePrecision(n=net.n, matrix=j, network=net, ridge_events=tuple(events))


def logo_log_det(sample_cov: np.ndarray, net: FilteringNetwork) -> float:
    """ln|J| of the LoGo precision, from clique/separator sub-determinants."""
    cov = np.asarray(sample_cov, dtype=float)
    if cov.shape != (net.n, net.n):
        raise ValidationError("covariance size does not match network")
    total = 0.0
    for groups, sign_factor in ((net.cliques, 1.0), (net.separators, -1.0)):
        if not groups:
            continue
        signs, lds = np.linalg.slogdet(_batched_blocks(cov, groups))
        if np.any(signs <= 0):
            bad = groups[int(np.argmax(signs <= 0))]
            raise EstimationError(f"non-PD sub-covariance on block {bad}")
        total += sign_factor * float(lds.sum())
    return -total


def dump_edge_list(net: FilteringNetwork, weights: np.ndarray, path) -> None:
    """Write the network as `u,v,weight` lines (debug helper)."""
    with open(path, "w") as fh:
        for u, v in sorted(net.edges):
            fh.write(f"{u},{v},{weights[u, v]!r}\n")
