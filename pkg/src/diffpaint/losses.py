"""Training objective: pixel term, matched stroke term with confidence
regularization, Wasserstein adversarial terms with gradient penalty, and
the adaptive total that balances them.

Stroke-to-stroke distance combines a per-slot L1 (rotation compared on
the circle) with the squared 2-Wasserstein distance between the
Gaussians induced by each stroke's position/size/rotation. For 2x2
covariances W2 has an algebraic closed form,

    ||mu1 - mu2||^2 + tr(S1) + tr(S2) - 2*sqrt(tr(S1 S2) + 2*sqrt(det(S1)det(S2)))

which is used instead of explicit matrix square roots: it is exactly
equal on SPD inputs and keeps gradients finite when the two covariance
eigenvalues coincide (square strokes), where an eigendecomposition
backward would divide by zero.

Target-to-prediction correspondence is an optimal assignment under
D_L1 + lambda_w * D_W, solved exactly; gradients flow through the
per-pair losses, never through the discrete matching.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

PIXEL_WEIGHT = 8.0
WASSERSTEIN_WEIGHT = 10.0
CONFIDENCE_WEIGHT = 0.1
PENALTY_WEIGHT = 10.0
GAMMA_EPS = 1e-8
THETA_SLOT = 4

REPORT_FIELDS = ("pixel", "stroke_match", "confidence_reg", "adv_generator", "adv_critic", "total", "gamma")


@dataclass
class Matching:
    """A bijection from target stroke index u to prediction index pi[u]."""

    permutation: Tuple[int, ...]
    cost: float

    def __post_init__(self):
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise ValueError("permutation must be a bijection on 0..N-1")


@dataclass
class LossReport:
    """Per-step scalars, in logging order (see REPORT_FIELDS)."""

    pixel: float
    stroke_match: float
    confidence_reg: float
    adv_generator: float
    adv_critic: float
    total: float
    gamma: float

    def values(self) -> Tuple[float, ...]:
        return tuple(getattr(self, name) for name in REPORT_FIELDS)

    def finite(self) -> bool:
        return all(abs(v) < float("inf") and v == v for v in self.values())


def pixel_loss(target: torch.Tensor, rendered: torch.Tensor, weight: float = PIXEL_WEIGHT) -> torch.Tensor:
    """weight * mean absolute difference."""
    if target.shape != rendered.shape:
        raise ValueError(f"shape mismatch: {tuple(target.shape)} vs {tuple(rendered.shape)}")
    return weight * (target - rendered).abs().mean()


def stroke_gaussian(params: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """The Gaussian a stroke induces: mean (x, y), covariance aligned to
    the stroke axes with standard deviations w/2 and h/2.

    Accepts (..., 8) parameter tensors; returns ((..., 2), (..., 2, 2)).
    """
    if params.shape[-1] != 8:
        raise ValueError("expected 8 parameter slots")
    if not torch.all((params[..., 2] > 0) & (params[..., 3] > 0)):
        raise ValueError("stroke height/width must be positive")
    mean = params[..., 0:2]
    phi = params[..., THETA_SLOT] * torch.pi
    cos, sin = torch.cos(phi), torch.sin(phi)
    a = (params[..., 3] / 2) ** 2  # variance along the width axis
    b = (params[..., 2] / 2) ** 2  # variance along the height axis
    row0 = torch.stack([a * cos**2 + b * sin**2, (a - b) * sin * cos], dim=-1)
    row1 = torch.stack([(a - b) * sin * cos, a * sin**2 + b * cos**2], dim=-1)
    return mean, torch.stack([row0, row1], dim=-2)


def gaussian_wasserstein(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Squared 2-Wasserstein distance between two stroke Gaussians.

    Broadcasts over leading dimensions of the (..., 8) inputs.
    """
    mu1, s1 = stroke_gaussian(u)
    mu2, s2 = stroke_gaussian(v)
    mean_term = ((mu1 - mu2) ** 2).sum(dim=-1)
    tr1 = s1[..., 0, 0] + s1[..., 1, 1]
    tr2 = s2[..., 0, 0] + s2[..., 1, 1]
    det1 = s1[..., 0, 0] * s1[..., 1, 1] - s1[..., 0, 1] * s1[..., 1, 0]
    det2 = s2[..., 0, 0] * s2[..., 1, 1] - s2[..., 0, 1] * s2[..., 1, 0]
    prod = s1 @ s2
    tr_prod = prod[..., 0, 0] + prod[..., 1, 1]
    cross = tr_prod + 2 * torch.sqrt((det1 * det2).clamp_min(0.0))
    cov_term = tr1 + tr2 - 2 * torch.sqrt(cross.clamp_min(0.0))
    return (mean_term + cov_term).clamp_min(0.0)


def stroke_param_l1(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Mean absolute slot difference, rotation measured on the circle."""
    diff = (u - v).abs()
    theta = diff[..., THETA_SLOT]
    theta = torch.minimum(theta, 1.0 - theta)
    return (diff.sum(dim=-1) - diff[..., THETA_SLOT] + theta) / u.shape[-1]


def confidence_bce(validity: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Per-element binary cross-entropy of sigmoid(logit) vs the 0/1 bit."""
    # the target must match the logit dtype or the result silently
    # downcasts, which matters on the float64 verification paths
    return F.binary_cross_entropy_with_logits(logits, validity.to(logits.dtype), reduction="none")


def _pair_cost_matrix(targets: torch.Tensor, preds: torch.Tensor, lambda_w: float) -> torch.Tensor:
    # (N, 8) x (M, 8) -> (N, M)
    t = targets.unsqueeze(1)
    p = preds.unsqueeze(0)
    return stroke_param_l1(t, p) + lambda_w * gaussian_wasserstein(t, p)


def match_strokes(
    targets: torch.Tensor, preds: torch.Tensor, lambda_w: float = WASSERSTEIN_WEIGHT
) -> Matching:
    """Optimal assignment of predictions to targets under the pair cost."""
    if targets.shape != preds.shape or targets.ndim != 2:
        raise ValueError("expected two aligned (N, 8) stroke sets")
    cost = _pair_cost_matrix(targets, preds, lambda_w).detach().cpu().double().numpy()
    rows, cols = linear_sum_assignment(cost)
    perm = tuple(int(c) for c in cols[rows.argsort()])
    return Matching(permutation=perm, cost=float(cost[rows, cols].sum()))


def stroke_loss(
    target_params: torch.Tensor,
    target_conf: torch.Tensor,
    pred_params: torch.Tensor,
    pred_logits: torch.Tensor,
    lambda_w: float = WASSERSTEIN_WEIGHT,
    lambda_c: float = CONFIDENCE_WEIGHT,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Matched stroke loss and confidence regularizer, batch-averaged.

    Per sample: (1/N) sum over matched pairs of
    c_u * (D_L1 + lambda_w * D_W) + D_bce, plus lambda_c * mean |logit|.
    Ground-truth-invalid strokes (c_u = 0) contribute only the BCE term.
    Returns (matched_term, confidence_term) as 0-dim tensors.
    """
    if target_params.ndim == 2:
        target_params = target_params.unsqueeze(0)
        target_conf = target_conf.unsqueeze(0)
        pred_params = pred_params.unsqueeze(0)
        pred_logits = pred_logits.unsqueeze(0)
    if target_params.shape != pred_params.shape:
        raise ValueError("target and predicted stroke sets must align")

    matched_terms = []
    for b in range(target_params.shape[0]):
        perm = match_strokes(target_params[b], pred_params[b], lambda_w).permutation
        order = torch.as_tensor(perm, dtype=torch.long, device=pred_params.device)
        p = pred_params[b][order]
        logits = pred_logits[b][order]
        geo = stroke_param_l1(target_params[b], p) + lambda_w * gaussian_wasserstein(target_params[b], p)
        bce = confidence_bce(target_conf[b], logits)
        matched_terms.append((target_conf[b] * geo + bce).mean())
    matched = torch.stack(matched_terms).mean()
    conf_reg = lambda_c * pred_logits.abs().mean()
    return matched, conf_reg


def critic_loss(
    critic,
    real: torch.Tensor,
    fake: torch.Tensor,
    rng: Optional[torch.Generator] = None,
    penalty_weight: float = PENALTY_WEIGHT,
) -> torch.Tensor:
    """Wasserstein critic objective with a unit-norm gradient penalty.

    mean D(fake) - mean D(real) + w * mean (||grad D(interp)||_2 - 1)^2,
    with per-sample interpolation weights drawn uniformly. The fake batch
    is detached: this loss only trains the critic.
    """
    fake = fake.detach()
    eps = torch.rand(real.shape[0], 1, 1, 1, generator=rng, dtype=real.dtype, device=real.device)
    interp = (eps * real + (1 - eps) * fake).requires_grad_(True)
    scores = critic(interp)
    grads = torch.autograd.grad(scores.sum(), interp, create_graph=True)[0]
    norms = grads.flatten(1).norm(dim=1)
    penalty = penalty_weight * ((norms - 1) ** 2).mean()
    return critic(fake).mean() - critic(real).mean() + penalty


def generator_adv_loss(critic, fake: torch.Tensor) -> torch.Tensor:
    """-mean D(fake); gradients flow through the renderer into the painter."""
    return -critic(fake).mean()


def adaptive_total(
    pixel: torch.Tensor, stroke: torch.Tensor, adv: Optional[torch.Tensor]
) -> Tuple[torch.Tensor, float]:
    """total = pixel + stroke + gamma * adv, with the balancing factor
    gamma = |pixel| / (|adv| + eps) held constant under differentiation.
    Pass adv=None outside the adversarial phase (gamma = 0)."""
    if adv is None:
        return pixel + stroke, 0.0
    gamma = (pixel.detach().abs() / (adv.detach().abs() + GAMMA_EPS)).item()
    return pixel + stroke + gamma * adv, gamma
