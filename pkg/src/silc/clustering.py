"""Unsupervised structure discovery over demonstration transitions.

Segmentation works purely on subgoals: each transition is annotated with the
state reached a fixed number of steps later in its own episode, and skill or
subtask groups are the K-means clusters of those subgoal vectors (subgoal
binning). Sub-cluster counts can be fixed or chosen by silhouette score.

K-means is the seeded Lloyd algorithm with k-means++ initialization, restarted
a configurable number of times (derived seeds) keeping the lowest-inertia
result, with deterministic tie-breaks throughout so downstream append-only
registries see stable indices across reruns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

KMEANS_MAX_ITER = 100
KMEANS_RESTARTS = 10


@dataclass
class AnnotatedTransition:
    """One (state, action) step plus its m-step-ahead subgoal annotation."""

    state: np.ndarray
    action: np.ndarray
    subgoal: np.ndarray
    episode_id: int
    step: int


@dataclass
class SkillGroup:
    """A cluster of transitions sharing a subgoal mode.

    ``subgoal_embedding`` is the medoid: the member subgoal closest to the
    cluster centroid, so the representative stays on the data manifold.
    """

    skill_index: int
    transitions: list[AnnotatedTransition]
    subgoal_embedding: np.ndarray


def annotate_subgoals(trajectory, m: int, episode_id: int = 0) -> list[AnnotatedTransition]:
    """Attach to every step the state observed ``m`` steps later (clamped).

    ``trajectory`` is a sequence of (state, action) pairs from one episode.
    The final steps, within ``m`` of the end, all point at the terminal state.
    """
    if len(trajectory) < 1:
        raise ContractViolation("trajectory must contain at least one transition")
    if m < 1:
        raise ContractViolation("subgoal offset m must be >= 1")
    states = [np.asarray(s, dtype=np.float64) for s, _ in trajectory]
    actions = [np.asarray(a, dtype=np.float64) for _, a in trajectory]
    last = len(states) - 1
    return [
        AnnotatedTransition(
            state=states[t],
            action=actions[t],
            subgoal=states[min(t + m, last)],
            episode_id=episode_id,
            step=t,
        )
        for t in range(len(states))
    ]


def _kmeanspp_init(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    centroids = np.empty((k, pts.shape[1]))
    centroids[0] = pts[rng.integers(n)]
    d2 = np.sum((pts - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            # Inverse-CDF draw keeps the choice reproducible across platforms.
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
            idx = min(idx, n - 1)
        centroids[j] = pts[idx]
        d2 = np.minimum(d2, np.sum((pts - centroids[j]) ** 2, axis=1))
    return centroids


def _assign(pts: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = np.sum((pts[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def _repair_empty(pts: np.ndarray, assignments: np.ndarray, centroids: np.ndarray, k: int) -> np.ndarray:
    """Give every empty cluster the point farthest from its assigned centroid.

    Donor clusters keep at least one member, so with k <= n the loop always
    terminates with all clusters nonempty.
    """
    assignments = assignments.copy()
    for c in range(k):
        if np.any(assignments == c):
            continue
        counts = np.bincount(assignments, minlength=k)
        dist = np.sum((pts - centroids[assignments]) ** 2, axis=1)
        dist[counts[assignments] < 2] = -1.0
        donor_pt = int(np.argmax(dist))
        assignments[donor_pt] = c
    return assignments


def _lloyd(pts: np.ndarray, k: int, rng: np.random.Generator, history: list | None = None):
    centroids = _kmeanspp_init(pts, k, rng)
    assignments = np.full(pts.shape[0], -1)
    for _ in range(KMEANS_MAX_ITER):
        new_assignments = _assign(pts, centroids)
        new_assignments = _repair_empty(pts, new_assignments, centroids, k)
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for c in range(k):
            centroids[c] = pts[assignments == c].mean(axis=0)
        if history is not None:
            history.append(inertia(pts, assignments, centroids))
    return assignments, centroids


def inertia(pts, assignments, centroids) -> float:
    pts = np.asarray(pts, dtype=np.float64)
    return float(np.sum((pts - np.asarray(centroids)[np.asarray(assignments)]) ** 2))


def kmeans(points, k: int, seed: int, n_restarts: int = KMEANS_RESTARTS):
    """Seeded, restarted K-means.

    Runs ``n_restarts`` Lloyd passes with seeds derived from ``seed`` and
    returns the assignment/centroid pair with the lowest inertia (ties to the
    earliest restart). Every cluster in the result is nonempty.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    n = pts.shape[0]
    if n < 1:
        raise ContractViolation("kmeans needs at least one point")
    if not 1 <= k <= n:
        raise ContractViolation(f"k must satisfy 1 <= k <= {n}, got {k}")
    best = None
    best_inertia = np.inf
    for restart in range(n_restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, restart]))
        assignments, centroids = _lloyd(pts, k, rng)
        j = inertia(pts, assignments, centroids)
        if j < best_inertia:
            best_inertia = j
            best = (assignments, centroids)
    assignments, centroids = best
    return list(assignments), [centroids[c] for c in range(k)]


def silhouette(points, assignments) -> float:
    """Mean silhouette coefficient; members of singleton clusters score 0."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    labels = np.asarray(assignments)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ContractViolation("silhouette needs at least two clusters")
    dist = np.sqrt(np.maximum(np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2), 0.0))
    scores = np.zeros(pts.shape[0])
    for i in range(pts.shape[0]):
        own = labels == labels[i]
        n_own = int(own.sum())
        if n_own < 2:
            continue  # singleton convention
        a = dist[i][own].sum() / (n_own - 1)
        b = min(dist[i][labels == other].mean() for other in uniq if other != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def auto_k(points, k_min: int, k_max: int, seed: int) -> int:
    """Silhouette sweep over k in [k_min, k_max]; ties go to the smallest k."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if not 2 <= k_min <= k_max <= pts.shape[0]:
        raise ContractViolation(
            f"need 2 <= k_min <= k_max <= n_points, got [{k_min}, {k_max}] with n={pts.shape[0]}"
        )
    best_k = k_min
    best_score = -np.inf
    for k in range(k_min, k_max + 1):
        assignments, _ = kmeans(pts, k, seed)
        score = silhouette(pts, assignments)
        if score > best_score:
            best_score = score
            best_k = k
    return best_k


def segment_by_subgoal(dataset, num_skills: int, seed: int) -> list[SkillGroup]:
    """Partition transitions into skill groups by clustering their subgoals.

    Groups are re-indexed deterministically (ascending centroid norm, then
    original cluster id) and each carries its medoid subgoal as embedding.
    """
    transitions = list(dataset)
    if num_skills < 1:
        raise ContractViolation("num_skills must be >= 1")
    if len(transitions) < num_skills:
        raise ContractViolation(
            f"dataset of {len(transitions)} transitions cannot form {num_skills} skill groups"
        )
    subgoals = np.asarray([t.subgoal for t in transitions], dtype=np.float64)
    assignments, centroids = kmeans(subgoals, num_skills, seed)
    assignments = np.asarray(assignments)
    order = sorted(range(num_skills), key=lambda c: (float(np.linalg.norm(centroids[c])), c))
    groups = []
    for new_index, c in enumerate(order):
        member_idx = np.flatnonzero(assignments == c)
        members = [transitions[i] for i in member_idx]
        d2 = np.sum((subgoals[member_idx] - centroids[c]) ** 2, axis=1)
        medoid = subgoals[member_idx[int(np.argmin(d2))]]
        groups.append(SkillGroup(skill_index=new_index, transitions=members, subgoal_embedding=medoid))
    return groups
