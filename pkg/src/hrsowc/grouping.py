"""K-means partition of users into groups by horizontal position."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GroupingPlan", "kmeans_group", "within_cluster_ss"]


@dataclass(frozen=True)
class GroupingPlan:
    num_groups: int
    assignment: tuple
    group_members: tuple

    @classmethod
    def from_assignment(cls, assignment, num_groups=None) -> "GroupingPlan":
        """Build a plan with groups renumbered by their lowest member index."""
        assignment = [int(a) for a in assignment]
        order = []
        for a in assignment:
            if a not in order:
                order.append(a)
        if num_groups is not None and len(order) != num_groups:
            raise ValueError("assignment leaves a group empty")
        relabel = {old: new for new, old in enumerate(order)}
        assignment = tuple(relabel[a] for a in assignment)
        members = tuple(tuple(k for k, a in enumerate(assignment) if a == g)
                        for g in range(len(order)))
        return cls(num_groups=len(order), assignment=assignment, group_members=members)

    @property
    def num_users(self) -> int:
        return len(self.assignment)


def within_cluster_ss(points, labels, centers) -> float:
    points = np.asarray(points, dtype=float)
    return float(np.sum((points - np.asarray(centers)[np.asarray(labels)]) ** 2))


def _farthest_point_seeds(points, g, rng):
    centers = [int(rng.integers(len(points)))]
    dist = np.sum((points - points[centers[0]]) ** 2, axis=1)
    for _ in range(1, g):
        nxt = int(np.argmax(dist))
        centers.append(nxt)
        dist = np.minimum(dist, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[centers].copy()


def _repair_empty(points, labels, centers, g):
    for _ in range(g):
        counts = np.bincount(labels, minlength=g)
        empty = np.flatnonzero(counts == 0)
        if not len(empty):
            break
        big = int(np.argmax(counts))
        idx = np.flatnonzero(labels == big)
        far = idx[np.argmax(np.sum((points[idx] - centers[big]) ** 2, axis=1))]
        labels[far] = empty[0]
        centers[empty[0]] = points[far]
        centers[big] = points[labels == big].mean(axis=0)
    return labels, centers


def kmeans_group(user_positions, g: int, seed: int = 0, max_iter: int = 100,
                 tol: float = 1e-9, return_history: bool = False):
    """Lloyd's algorithm on the horizontal user coordinates.

    Seeding is farthest-point from a seeded random first centre. Empty
    clusters get the farthest point of the largest cluster. Returns a
    `GroupingPlan`; with ``return_history`` also the within-cluster sum of
    squares after every iteration.
    """
    pts = np.asarray(user_positions, dtype=float)
    if pts.ndim != 2:
        raise ValueError("user_positions must be a 2-D array")
    pts = pts[:, :2]
    K = len(pts)
    if not 1 <= g <= K:
        raise ValueError(f"need 1 <= g <= K, got g={g}, K={K}")

    rng = np.random.default_rng(seed)
    centers = _farthest_point_seeds(pts, g, rng)
    history = []
    labels = np.zeros(K, dtype=int)
    for _ in range(max_iter):
        d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        labels, centers = _repair_empty(pts, labels, centers, g)
        new = np.array([pts[labels == j].mean(axis=0) for j in range(g)])
        shift = float(np.max(np.linalg.norm(new - centers, axis=1)))
        centers = new
        history.append(within_cluster_ss(pts, labels, centers))
        if shift < tol:
            break

    plan = GroupingPlan.from_assignment(labels, num_groups=g)
    if return_history:
        return plan, history
    return plan
