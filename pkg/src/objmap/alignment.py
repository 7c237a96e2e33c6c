"""Windowed correspondence search between two vehicle maps.

Candidate windows from each map are compared pairwise: size-gated putative
associations are scored by pairwise distance consistency, the densest
mutually consistent association set is extracted spectrally, and the
resulting rigid transform is gated on roll/pitch before a hypothesis is
accepted.

The per-window-pair selection runs on a compiled kernel when available
(see ``objmap._kernels``); the pure-numpy route below is both the fallback
and the reference the kernel is tested against.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import (
    DegenerateConfigurationError,
    RigidTransform,
    estimate_rigid_transform,
    euler_zyx,
)
from .reconstruct import VehicleMap
from .tracking import relative_size_difference, size_score

__all__ = [
    "AlignmentParams",
    "PutativeAssociation",
    "ConsistencyProblem",
    "AlignmentHypothesis",
    "window_offsets",
    "putative_associations",
    "consistency_matrix",
    "densest_consistent_set",
    "exact_consistent_oracle",
    "consistency_objective",
    "align_window_pair",
    "align_maps",
    "rethreshold",
]


@dataclass(frozen=True)
class AlignmentParams:
    """Windowing, gating, and solver parameters for the correspondence search."""

    WL: int = 50  # window length, objects
    SL: int = 10  # stride, objects
    eps_lim: float = 2.0  # pairwise distance-difference gate, m
    r_lim: float = 0.2  # relative size-difference gate
    alpha_lim: float = 22.5  # roll/pitch acceptance gate, deg
    s_lim: int = 5  # minimum association count for acceptance
    sigma_c: float | None = None  # consistency kernel width, m; None -> eps_lim / 3
    power_iters: int = 1000
    power_tol: float = 1e-9

    def __post_init__(self):
        if self.WL < 3:
            raise ValueError("WL must be at least 3")
        if not 1 <= self.SL <= self.WL:
            raise ValueError("SL must be in [1, WL]")
        if self.sigma_c is None:
            object.__setattr__(self, "sigma_c", self.eps_lim / 3.0)
        if min(self.eps_lim, self.r_lim, self.alpha_lim, self.s_lim, self.sigma_c) <= 0:
            raise ValueError("alignment limits must be strictly positive")
        if self.power_iters < 1 or self.power_tol <= 0:
            raise ValueError("power iteration settings must be positive")


@dataclass(frozen=True)
class PutativeAssociation:
    """Size-compatible object pair with its size-score weight."""

    idx_i: int
    idx_j: int
    weight: float


@dataclass(frozen=True)
class ConsistencyProblem:
    """Associations plus their pairwise-consistency affinity matrix.

    The diagonal carries the association weights; an off-diagonal entry is
    zero whenever two associations share an object on either side or their
    inter-object distances disagree beyond the gate.
    """

    associations: list[PutativeAssociation]
    affinity: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.affinity, dtype=float)
        n = len(self.associations)
        if A.shape != (n, n):
            raise ValueError("affinity shape must match the association count")
        if n and np.abs(A - A.T).max() > 1e-12:
            raise ValueError("affinity must be symmetric")
        object.__setattr__(self, "affinity", A)


@dataclass(frozen=True)
class AlignmentHypothesis:
    """Outcome of one window-pair comparison."""

    offset_i: int
    offset_j: int
    selected: tuple[tuple[int, int], ...]  # map-global (idx_i, idx_j) pairs
    transform: RigidTransform
    score: int  # |selected|
    angular_ok: bool
    accepted: bool
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0


def window_offsets(N_i: int, N_j: int, WL: int, SL: int) -> list[tuple[int, int]]:
    """All stride-index pairs whose windows are nonempty, in lexicographic order.

    Window s covers object indices [s*SL, min(s*SL + WL, N)); the trailing
    partial windows are searched rather than dropped.
    """
    if N_i < 1 or N_j < 1:
        raise ValueError("maps must be nonempty")
    n_i = (N_i + SL - 1) // SL
    n_j = (N_j + SL - 1) // SL
    return [(a, b) for a in range(n_i) for b in range(n_j)]


def putative_associations(sizes_i, sizes_j, r_lim: float) -> list[PutativeAssociation]:
    """All cross pairs passing the relative size-difference gate.

    Weighted by the raised-cosine size score with the gate as its cutoff, so
    weights are strictly positive.
    """
    out = []
    for a, ha in enumerate(np.asarray(sizes_i, dtype=float)):
        for b, hb in enumerate(np.asarray(sizes_j, dtype=float)):
            if relative_size_difference(ha, hb) < r_lim:
                out.append(PutativeAssociation(a, b, size_score(ha, hb, r_lim)))
    return out


def consistency_matrix(
    assocs: list[PutativeAssociation],
    positions_i: np.ndarray,
    positions_j: np.ndarray,
    eps_lim: float,
    sigma_c: float,
) -> ConsistencyProblem:
    """Gaussian affinity over pairwise distance agreement, gated at eps_lim.

    Associations sharing an object index on either side are mutually
    exclusive (affinity zero) regardless of geometry.
    """
    if not assocs:
        raise ValueError("association list must be nonempty")
    ai = np.array([a.idx_i for a in assocs])
    aj = np.array([a.idx_j for a in assocs])
    w = np.array([a.weight for a in assocs])
    Pi = np.asarray(positions_i, dtype=float)[ai]
    Pj = np.asarray(positions_j, dtype=float)[aj]
    Di = np.linalg.norm(Pi[:, None, :] - Pi[None, :, :], axis=2)
    Dj = np.linalg.norm(Pj[:, None, :] - Pj[None, :, :], axis=2)
    eps = np.abs(Di - Dj)
    A = np.exp(-(eps * eps) / (2.0 * sigma_c * sigma_c))
    ok = (eps <= eps_lim) & (ai[:, None] != ai[None, :]) & (aj[:, None] != aj[None, :])
    A = np.where(ok, A, 0.0)
    np.fill_diagonal(A, w)
    return ConsistencyProblem(assocs, A)


def _power_iteration(A: np.ndarray, power_iters: int, power_tol: float) -> np.ndarray:
    n = len(A)
    x = np.full(n, 1.0 / math.sqrt(n))
    for _ in range(power_iters):
        y = A @ x
        ny = float(np.linalg.norm(y))
        if ny <= 0.0:
            break
        y /= ny
        if float(np.linalg.norm(y - x)) < power_tol:
            return y
        x = y
    return x


_GREEDY_SEEDS = 16


def _greedy_round(A: np.ndarray, order: np.ndarray, seed_pos: int) -> tuple[list[int], float]:
    """Guarded greedy over candidates in eigenvector order, forcing one seed.

    A candidate joins only when compatible (positive affinity) with every
    selected node and the mean-affinity objective does not decrease. Returns
    the selected set and its affinity mass.
    """
    selected: list[int] = []
    cur_sum = 0.0
    positions = [seed_pos] + [p for p in range(len(order)) if p != seed_pos]
    for idx in positions:
        c = int(order[idx])
        aff_sum = 0.0
        compatible = True
        for s in selected:
            a = A[c, s]
            if a <= 0.0:
                compatible = False
                break
            aff_sum += a
        if not compatible:
            continue
        new_sum = cur_sum + A[c, c] + 2.0 * aff_sum
        k = len(selected)
        if k == 0 or new_sum * k >= cur_sum * (k + 1):
            selected.append(c)
            cur_sum = new_sum
    return selected, cur_sum


def densest_consistent_set(
    problem: ConsistencyProblem, power_iters: int = 1000, power_tol: float = 1e-9
) -> list[int]:
    """Approximate densest mutually compatible association set.

    Power iteration from the uniform vector yields the dominant eigenvector;
    a guarded greedy then rounds it, restarted from each of the leading
    eigenvector entries, and the restart with the best mean-affinity
    objective wins. The guard keeps low-affinity hangers-on from diluting a
    dense core; the restarts stop one early commitment from blocking a
    better set.
    """
    A = problem.affinity
    n = len(A)
    if n == 0:
        return []
    x = _power_iteration(A, power_iters, power_tol)
    order = np.argsort(-x, kind="stable")
    best: list[int] = []
    best_u = -math.inf
    for seed_pos in range(min(n, _GREEDY_SEEDS)):
        selected, cur_sum = _greedy_round(A, order, seed_pos)
        u = cur_sum / len(selected)
        if u > best_u:
            best, best_u = selected, u
    return best


def consistency_objective(problem: ConsistencyProblem, indices) -> float:
    """Mean pairwise affinity mass x^T A x / x^T x of an indicator set."""
    idx = list(indices)
    if not idx:
        return 0.0
    sub = problem.affinity[np.ix_(idx, idx)]
    return float(sub.sum() / len(idx))


def exact_consistent_oracle(problem: ConsistencyProblem) -> list[int]:
    """Exhaustive maximizer of the consistency objective (n <= 20).

    Depth-first enumeration over all pairwise-compatible subsets using
    compatibility bitmasks; intended as a test oracle for the spectral
    heuristic, not for production-sized problems.
    """
    A = problem.affinity
    n = len(A)
    if n > 20:
        raise ValueError("exact oracle limited to 20 associations")
    if n == 0:
        return []
    comp = []
    for i in range(n):
        m = 0
        for j in range(n):
            if j != i and A[i, j] > 0.0:
                m |= 1 << j
        comp.append(m)

    best_u = -math.inf
    best: list[int] = []
    cur: list[int] = []

    def dfs(cand: int, cur_sum: float) -> None:
        nonlocal best_u, best
        if cur:
            u = cur_sum / len(cur)
            if u > best_u:
                best_u = u
                best = cur.copy()
        m = cand
        while m:
            low = m & -m
            c = low.bit_length() - 1
            m &= m - 1
            add = A[c, c] + 2.0 * sum(A[c, s] for s in cur)
            cur.append(c)
            dfs(m & comp[c], cur_sum + add)
            cur.pop()

    dfs((1 << n) - 1, 0.0)
    return best


def _select_pure(pos_i, sz_i, pos_j, sz_j, params: AlignmentParams):
    assocs = putative_associations(sz_i, sz_j, params.r_lim)
    if not assocs:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    problem = consistency_matrix(assocs, pos_i, pos_j, params.eps_lim, params.sigma_c)
    sel = densest_consistent_set(problem, params.power_iters, params.power_tol)
    ai = np.array([assocs[k].idx_i for k in sel], dtype=np.int64)
    aj = np.array([assocs[k].idx_j for k in sel], dtype=np.int64)
    return ai, aj


def _select(pos_i, sz_i, pos_j, sz_j, params: AlignmentParams, backend: str):
    native = _kernels.get_native(backend)
    if native is not None:
        return native.select_window_associations(
            np.ascontiguousarray(pos_i),
            np.ascontiguousarray(sz_i),
            np.ascontiguousarray(pos_j),
            np.ascontiguousarray(sz_j),
            params.r_lim,
            params.eps_lim,
            params.sigma_c,
            params.power_iters,
            params.power_tol,
        )
    return _select_pure(pos_i, sz_i, pos_j, sz_j, params)


def align_window_pair(
    pos_i: np.ndarray,
    sizes_i: np.ndarray,
    pos_j: np.ndarray,
    sizes_j: np.ndarray,
    params: AlignmentParams,
    offset: tuple[int, int] = (0, 0),
    backend: str = "auto",
) -> AlignmentHypothesis:
    """Compare one window pair and produce a gated alignment hypothesis.

    The transform maps window-i coordinates into window-j coordinates. With
    fewer than 3 selected associations no transform can be estimated: the
    hypothesis carries the identity and is not accepted.
    """
    sel_i, sel_j = _select(pos_i, sizes_i, pos_j, sizes_j, params, backend)
    score = len(sel_i)
    base_i = offset[0] * params.SL
    base_j = offset[1] * params.SL
    selected = tuple((base_i + int(a), base_j + int(b)) for a, b in zip(sel_i, sel_j))

    transform = RigidTransform.identity()
    angular_ok = False
    roll = pitch = yaw = 0.0
    if score >= 3:
        try:
            transform = estimate_rigid_transform(
                np.asarray(pos_i)[sel_i], np.asarray(pos_j)[sel_j]
            )
            roll, pitch, yaw = euler_zyx(transform.rotation)
            angular_ok = max(abs(roll), abs(pitch)) <= params.alpha_lim
        except DegenerateConfigurationError:
            transform = RigidTransform.identity()
            angular_ok = False
    accepted = angular_ok and score > params.s_lim
    return AlignmentHypothesis(
        offset_i=offset[0],
        offset_j=offset[1],
        selected=selected,
        transform=transform,
        score=score,
        angular_ok=angular_ok,
        accepted=accepted,
        roll=roll,
        pitch=pitch,
        yaw=yaw,
    )


def align_maps(
    map_i: VehicleMap,
    map_j: VehicleMap,
    params: AlignmentParams,
    workers: int = 1,
    backend: str = "auto",
) -> list[AlignmentHypothesis]:
    """Evaluate every window pair; results ordered by (offset_i, offset_j)."""
    pos_i, sz_i = map_i.positions(), map_i.sizes()
    pos_j, sz_j = map_j.positions(), map_j.sizes()
    offsets = window_offsets(len(map_i), len(map_j), params.WL, params.SL)

    def one(off: tuple[int, int]) -> AlignmentHypothesis:
        s_i, s_j = off
        wi = slice(s_i * params.SL, min(s_i * params.SL + params.WL, len(map_i)))
        wj = slice(s_j * params.SL, min(s_j * params.SL + params.WL, len(map_j)))
        return align_window_pair(
            pos_i[wi], sz_i[wi], pos_j[wj], sz_j[wj], params, offset=off, backend=backend
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hyps = list(pool.map(one, offsets))
    else:
        hyps = [one(off) for off in offsets]
    hyps.sort(key=lambda h: (h.offset_i, h.offset_j))
    return hyps


def rethreshold(
    hypotheses: list[AlignmentHypothesis], s_lim: int
) -> list[AlignmentHypothesis]:
    """Re-evaluate acceptance at a different association-count threshold.

    Selection and transforms are threshold-independent, so sweeping s_lim
    only flips the accepted flag.
    """
    return [
        AlignmentHypothesis(
            offset_i=h.offset_i,
            offset_j=h.offset_j,
            selected=h.selected,
            transform=h.transform,
            score=h.score,
            angular_ok=h.angular_ok,
            accepted=h.angular_ok and h.score > s_lim,
            roll=h.roll,
            pitch=h.pitch,
            yaw=h.yaw,
        )
        for h in hypotheses
    ]
