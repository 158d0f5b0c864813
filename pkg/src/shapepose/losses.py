"""Training objectives: shape (Chamfer / EMD), per-point pose loss, KL, total.

All losses take torch tensors with optional leading batch dimensions and
return one value per batch item (a 0-d tensor for unbatched input).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .geometry import _as_tensor, _rotation_translation, transform_points

EXACT_EMD_MAX_POINTS = 512


@dataclass(frozen=True)
class LossWeights:
    w_shape: float = 1.0
    w_kld: float = 100.0
    w_pose: float = 100.0

    def __post_init__(self):
        for name in ("w_shape", "w_kld", "w_pose"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass
class LossBreakdown:
    shape: torch.Tensor
    kld: torch.Tensor
    pose: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("shape", "kld", "pose", "total")}


def _pairwise_dist(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.cdist(a, b, compute_mode="donot_use_mm_for_euclid_dist")


def _check_cloud(x: torch.Tensor, name: str):
    if x.dim() < 2 or x.shape[-1] != 3 or x.shape[-2] < 1:
        raise ValueError(f"{name} must be (..., N, 3) with N >= 1, got {tuple(x.shape)}")


def chamfer_distance(pc1, pc2) -> torch.Tensor:
    """Symmetric mean nearest-neighbour distance (unsquared)."""
    a, b = _as_tensor(pc1), _as_tensor(pc2)
    _check_cloud(a, "pc1")
    _check_cloud(b, "pc2")
    d = _pairwise_dist(a, b.to(a.dtype))
    return 0.5 * (d.min(-1).values.mean(-1) + d.min(-2).values.mean(-1))


# -- assignment -----------------------------------------------------------

def auction_assignment(cost: np.ndarray, eps: float | None = None) -> np.ndarray:
    """Near-optimal min-cost perfect matching by the forward auction algorithm.

    Uses epsilon scaling down to `eps` (default 1e-3 x mean cost); the
    resulting total cost is within N * eps of the optimum.
    Returns col such that row i is matched to column col[i].
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if n == 1:
        return np.zeros(1, dtype=int)
    benefit = -cost
    final_eps = eps if eps is not None else 1e-3 * max(cost.mean(), 1e-12)
    prices = np.zeros(n)
    cur_eps = max(np.ptp(cost) / 4.0, final_eps)
    rows = np.arange(n)
    while True:
        owner = np.full(n, -1)
        assigned = np.full(n, -1)
        while True:
            free = np.flatnonzero(assigned < 0)
            if len(free) == 0:
                break
            values = benefit[free] - prices
            top2 = np.argpartition(-values, 1, axis=1)[:, :2]
            v0 = values[np.arange(len(free)), top2[:, 0]]
            v1 = values[np.arange(len(free)), top2[:, 1]]
            swap = v1 > v0
            best = np.where(swap, top2[:, 1], top2[:, 0])
            first, second = np.maximum(v0, v1), np.minimum(v0, v1)
            bids = prices[best] + first - second + cur_eps
            # highest bid per object wins
            order = np.lexsort((-bids, best))
            objs = best[order]
            keep = np.ones(len(order), dtype=bool)
            keep[1:] = objs[1:] != objs[:-1]
            win_people, win_objs = free[order[keep]], objs[keep]
            prev = owner[win_objs]
            assigned[prev[prev >= 0]] = -1
            owner[win_objs] = win_people
            assigned[win_people] = win_objs
            prices[win_objs] = bids[order[keep]]
        if cur_eps <= final_eps:
            break
        cur_eps = max(cur_eps / 5.0, final_eps)
    assert np.array_equal(np.sort(assigned), rows)
    return assigned


def optimal_assignment(cost: np.ndarray, exact_threshold: int = EXACT_EMD_MAX_POINTS) -> np.ndarray:
    """Column index matched to each row: exact Hungarian up to the threshold, auction above."""
    if cost.shape[0] <= exact_threshold:
        _, col = linear_sum_assignment(cost)
        return col
    return auction_assignment(cost)


def emd_distance(pc1, pc2, exact_threshold: int = EXACT_EMD_MAX_POINTS) -> torch.Tensor:
    """Mean matched distance under the optimal bijection.

    The assignment is solved without gradient; the returned value is
    differentiable w.r.t. both clouds under that frozen assignment.
    """
    a, b = _as_tensor(pc1), _as_tensor(pc2)
    _check_cloud(a, "pc1")
    _check_cloud(b, "pc2")
    if a.shape != b.shape:
        raise ValueError(f"EMD needs equal-size clouds, got {tuple(a.shape)} and {tuple(b.shape)}")
    b = b.to(a.dtype)
    batch_shape = a.shape[:-2]
    a2, b2 = a.reshape(-1, *a.shape[-2:]), b.reshape(-1, *b.shape[-2:])
    with torch.no_grad():
        cost = _pairwise_dist(a2, b2).double().cpu().numpy()
    perm = torch.as_tensor(np.stack([optimal_assignment(c, exact_threshold) for c in cost]))
    matched = torch.gather(b2, 1, perm.unsqueeze(-1).expand(-1, -1, 3))
    d = torch.linalg.vector_norm(a2 - matched, dim=-1).mean(-1)
    return d.reshape(batch_shape)


# -- pose and latent terms ------------------------------------------------

def per_point_l2(points, pose_hat, pose_gt) -> torch.Tensor:
    """Mean distance between the cloud moved by the estimated and by the true pose.

    Input:
        points: (..., N, 3) cloud in the units the poses act on
        pose_hat, pose_gt: Pose or (rotation, translation); rotation may be a
            quaternion (normalized internally) or a matrix
    """
    pts = _as_tensor(points)
    _check_cloud(pts, "points")
    a = transform_points(pts, _rotation_translation(pose_hat))
    b = transform_points(pts, _rotation_translation(pose_gt))
    sq = ((a - b) ** 2).sum(-1)
    # sqrt has an infinite derivative at 0; route zero rows around it
    nonzero = sq > 0
    dist = torch.where(nonzero, torch.sqrt(torch.where(nonzero, sq, torch.ones_like(sq))),
                       torch.zeros_like(sq))
    return dist.mean(-1)


def kl_standard_normal(mu, logvar) -> torch.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), averaged over latent dimensions."""
    mu, logvar = _as_tensor(mu), _as_tensor(logvar)
    return -0.5 * (1 + logvar - mu * mu - logvar.exp()).mean(-1)


def total_loss(shape, kld, pose, weights: LossWeights = LossWeights()) -> LossBreakdown:
    terms = [torch.as_tensor(t, dtype=torch.float64) if not isinstance(t, torch.Tensor) else t
             for t in (shape, kld, pose)]
    for name, t in zip(("shape", "kld", "pose"), terms):
        if not bool(torch.isfinite(t).all()):
            raise ValueError(f"{name} loss is not finite")
    s, k, p = terms
    total = weights.w_shape * s + weights.w_kld * k + weights.w_pose * p
    return LossBreakdown(s, k, p, total)
