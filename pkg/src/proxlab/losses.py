"""Staleness arithmetic, proximal approximation, surrogate losses, advantages.

Everything here is a pure function. Losses return the objective to
MAXIMIZE (the trainer negates before descending); importance-weight
statistics are always reported on the end-to-end ratio
exp(logp_theta - logp_behav) so the three strategies share one scale.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .autodiff import Value, clip, minimum


class StalenessError(ValueError):
    """Token version stamps ahead of the trainer: a system bug upstream."""


class LossError(ValueError):
    """Non-finite ratio or malformed loss inputs."""


class ProxMode(enum.Enum):
    COUPLED = "coupled"
    RECOMPUTE = "recompute"
    LOGLINEAR = "loglinear"


class SnapshotTiming(enum.Enum):
    PER_TRAINING_STEP = "per_training_step"
    PER_MINIBATCH = "per_minibatch"


@dataclass(frozen=True)
class ProxStrategy:
    """Which proximal policy the decoupled loss anchors to, and when it is taken.

    COUPLED ignores snapshot_timing. For LOGLINEAR the production-faithful
    timing is PER_MINIBATCH (the interpolation target is the loss forward's
    own detached log-probs, so no extra scoring pass ever runs);
    PER_TRAINING_STEP instead anchors to a step-start scoring pass, which
    costs the same forward as RECOMPUTE whenever stale tokens are present.
    """

    mode: ProxMode
    snapshot_timing: SnapshotTiming = SnapshotTiming.PER_TRAINING_STEP

    @staticmethod
    def coupled() -> "ProxStrategy":
        return ProxStrategy(ProxMode.COUPLED)

    @staticmethod
    def recompute(timing: SnapshotTiming = SnapshotTiming.PER_TRAINING_STEP) -> "ProxStrategy":
        return ProxStrategy(ProxMode.RECOMPUTE, timing)

    @staticmethod
    def loglinear(timing: SnapshotTiming = SnapshotTiming.PER_MINIBATCH) -> "ProxStrategy":
        return ProxStrategy(ProxMode.LOGLINEAR, timing)

    @staticmethod
    def from_name(name: str, timing: str | None = None) -> "ProxStrategy":
        mode = ProxMode(name)
        if timing is not None:
            return ProxStrategy(mode, SnapshotTiming(timing))
        if mode is ProxMode.LOGLINEAR:
            return ProxStrategy.loglinear()
        return ProxStrategy(mode)


@dataclass(frozen=True)
class StalenessInfo:
    """Per-token version stamps against the trainer's current version."""

    per_token_version: np.ndarray
    current_version: int
    per_token_staleness: np.ndarray

    @staticmethod
    def compute(versions: np.ndarray, current_version: int) -> "StalenessInfo":
        return StalenessInfo(versions, current_version, staleness(versions, current_version))


@dataclass(frozen=True)
class LossReport:
    """Objective value plus per-minibatch token statistics."""

    objective: float
    clipped_tokens: int
    iw_max: float
    iw_min: float
    token_count: int


def staleness(versions: np.ndarray, current_version: int) -> np.ndarray:
    """current_version minus each token's behavior version; negatives are a bug."""
    versions = np.asarray(versions, dtype=np.int64)
    s = current_version - versions
    if s.size and s.min() < 0:
        bad = int(versions.max())
        raise StalenessError(
            f"token version {bad} is ahead of current version {current_version}"
        )
    return s


def alpha(s: np.ndarray) -> np.ndarray:
    """Interpolation weight on the behavior log-prob: 0 at s=0, 1/s at s>=1."""
    s = np.asarray(s)
    if s.size and s.min() < 0:
        raise StalenessError("staleness must be >= 0")
    return np.where(s >= 1, 1.0 / np.maximum(s, 1), 0.0)


def approx_prox_logp(
    old_logp: np.ndarray,
    cur_logp: np.ndarray,
    versions: np.ndarray,
    current_version: int,
) -> np.ndarray:
    """Log-linear proximal approximation: alpha*old + (1-alpha)*cur, gradient-free.

    Inputs and output are plain arrays, so nothing here can leak a gradient
    path back to the live parameters. The alpha=0 and alpha=1 endpoints are
    forced exact so the fresh-data and one-step-stale regimes reduce
    bit-for-bit to their limits.
    """
    old_logp = np.asarray(old_logp, dtype=np.float64)
    cur_logp = np.asarray(cur_logp, dtype=np.float64)
    if old_logp.shape != cur_logp.shape:
        raise LossError(f"shape mismatch: old {old_logp.shape} vs cur {cur_logp.shape}")
    if not (np.all(np.isfinite(old_logp)) and np.all(np.isfinite(cur_logp))):
        raise LossError("approx_prox_logp: non-finite log-probs")
    a = alpha(staleness(np.asarray(versions), current_version))
    if a.shape != old_logp.shape:
        raise LossError(f"shape mismatch: versions {a.shape} vs log-probs {old_logp.shape}")
    prox = a * old_logp + (1.0 - a) * cur_logp
    prox = np.where(a == 0.0, cur_logp, prox)
    prox = np.where(a == 1.0, old_logp, prox)
    return prox


def _check_ratio_finite(name: str, ratio: np.ndarray) -> None:
    if not np.all(np.isfinite(ratio)):
        bad = np.flatnonzero(~np.isfinite(ratio))
        raise LossError(f"non-finite {name} at token indices {bad.tolist()}")


def _constant(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise LossError(f"{name} must be finite")
    return x


def coupled_ppo_loss(
    logp_theta: Value,
    logp_old: np.ndarray,
    adv: np.ndarray,
    eps: float,
) -> tuple[Value, LossReport]:
    """Clipped surrogate with a single old policy serving both roles.

    objective = mean_t min(r_t * A_t, clip(r_t, 1-eps, 1+eps) * A_t) with
    r_t = exp(logp_theta - logp_old). A token counts as clipped when its
    ratio is outside the band AND the clipped branch is the one the min
    selects.
    """
    if eps <= 0:
        raise LossError(f"eps must be positive, got {eps}")
    logp_old = _constant(logp_old, "logp_old")
    adv = _constant(adv, "adv")
    if logp_theta.data.shape != logp_old.shape or logp_old.shape != adv.shape:
        raise LossError(
            f"shape mismatch: theta {logp_theta.data.shape}, old {logp_old.shape}, adv {adv.shape}"
        )
    ratio = (logp_theta - Value(logp_old)).exp()
    _check_ratio_finite("importance ratio", ratio.data)
    surr = minimum(ratio * Value(adv), clip(ratio, 1.0 - eps, 1.0 + eps) * Value(adv))
    objective = surr.mean()
    report = _loss_report(objective, ratio.data, ratio.data, adv, eps)
    return objective, report


def decoupled_loss(
    logp_theta: Value,
    logp_prox: np.ndarray,
    logp_behav: np.ndarray,
    adv: np.ndarray,
    eps: float,
) -> tuple[Value, LossReport]:
    """Clipped surrogate with the off-policy correction split from the trust region.

    w_t = exp(logp_prox - logp_behav) corrects for the data-generating
    policy and carries no gradient; rho_t = exp(logp_theta - logp_prox) is
    the ratio the clip constrains. iw stats still report the end-to-end
    ratio exp(logp_theta - logp_behav).
    """
    if eps <= 0:
        raise LossError(f"eps must be positive, got {eps}")
    logp_prox = _constant(logp_prox, "logp_prox")
    logp_behav = _constant(logp_behav, "logp_behav")
    adv = _constant(adv, "adv")
    shapes = {logp_theta.data.shape, logp_prox.shape, logp_behav.shape, adv.shape}
    if len(shapes) != 1:
        raise LossError(f"shape mismatch across loss inputs: {sorted(shapes)}")
    w = np.exp(logp_prox - logp_behav)
    _check_ratio_finite("importance weight", w)
    rho = (logp_theta - Value(logp_prox)).exp()
    _check_ratio_finite("trust-region ratio", rho.data)
    surr = minimum(rho * Value(adv), clip(rho, 1.0 - eps, 1.0 + eps) * Value(adv))
    objective = (Value(w) * surr).mean()
    total_ratio = np.exp(logp_theta.data - logp_behav)
    report = _loss_report(objective, rho.data, total_ratio, adv, eps)
    return objective, report


def _loss_report(objective: Value, clip_ratio: np.ndarray, iw_ratio: np.ndarray,
                 adv: np.ndarray, eps: float) -> LossReport:
    outside = (clip_ratio < 1.0 - eps) | (clip_ratio > 1.0 + eps)
    clipped_value = np.clip(clip_ratio, 1.0 - eps, 1.0 + eps) * adv
    binding = clipped_value < clip_ratio * adv
    n = clip_ratio.size
    return LossReport(
        objective=float(objective.data),
        clipped_tokens=int(np.sum(outside & binding)),
        iw_max=float(iw_ratio.max()) if n else 1.0,
        iw_min=float(iw_ratio.min()) if n else 1.0,
        token_count=n,
    )


def grpo_advantages(rewards: np.ndarray, group_ids: np.ndarray, eps_std: float = 1e-6) -> np.ndarray:
    """Per-trajectory advantage: reward centered and scaled within its prompt group.

    Population std with an additive floor; singleton or constant groups get
    advantage 0 from the zero numerator.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    group_ids = np.asarray(group_ids)
    if rewards.shape != group_ids.shape:
        raise LossError(f"shape mismatch: rewards {rewards.shape} vs group_ids {group_ids.shape}")
    out = np.zeros_like(rewards)
    for gid in np.unique(group_ids):
        mask = group_ids == gid
        r = rewards[mask]
        out[mask] = (r - r.mean()) / (r.std() + eps_std)
    return out
