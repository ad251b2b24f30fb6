"""Loss terms and their combination.

Three live terms: supervised cross-entropy on labeled data, the
confidence-thresholded pseudo-label cross-entropy, and the negative-cosine
self-supervised feature loss. Two ablation variants of the feature loss
(MSE and temperature-sharpened softmax cross-entropy) are provided behind
the same interface. Weight decay is a loss term, not an optimizer feature.

Teacher-side tensors (weak-branch logits and features) are detached inside
the loss functions, so they contribute exactly zero parameter gradient even
if the caller passes them with a live autograd graph.

Cross-entropies are computed in log-space from logits (log-sum-exp), never
through explicit probabilities, to avoid log(0).
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

NORM_EPS = 1e-12  # cosine-loss norm clamp for degenerate (near-zero) features


@dataclass
class LossReport:
    """Per-step scalar summary of the loss components."""
    l_l: float
    l_p: float
    l_s: float
    l_wd: float
    total: float
    mask_rate: float
    ssl_degenerate: int = 0  # cosine rows whose norm hit the clamp


def supervised_loss(labels_onehot, logits):
    """Mean cross-entropy between one-hot labels and softmax(logits)."""
    if torch.isnan(logits).any():
        raise ValueError("NaN logits in supervised loss")
    rows = labels_onehot.sum(dim=1)
    if not torch.allclose(rows, torch.ones_like(rows)) or \
            not ((labels_onehot == 0) | (labels_onehot == 1)).all():
        raise ValueError("labels must be one-hot rows")
    return -(labels_onehot * F.log_softmax(logits, dim=1)).sum(dim=1).mean()


def pseudo_label_loss(weak_logits, strong_logits, tau):
    """Confidence-thresholded cross-entropy against argmax pseudo-labels.

    Returns (loss, mask_rate). The weak branch is the teacher: it is
    detached and only strong_logits carry gradient. The mask uses a strict
    inequality max(w) > tau; argmax ties break toward the lowest class index.
    """
    if tau < 0.0:
        raise ValueError("tau must be >= 0")
    with torch.no_grad():
        w = F.softmax(weak_logits.detach(), dim=1)
        conf, _ = w.max(dim=1)
        # lowest-index tie-break, independent of backend argmax conventions
        pseudo = (w == w.max(dim=1, keepdim=True).values).float().argmax(dim=1)
        mask = (conf > tau).float()
    logq = F.log_softmax(strong_logits, dim=1)
    per_row = -logq.gather(1, pseudo.unsqueeze(1)).squeeze(1)
    loss = (per_row * mask).mean() if mask.numel() > 0 else strong_logits.sum() * 0.0
    return loss, float(mask.mean().item())


def _clamped_norms(x):
    norms = x.norm(dim=1, keepdim=True)
    degenerate = int((norms < NORM_EPS).sum().item())
    return norms.clamp_min(NORM_EPS), degenerate


def cosine_ssl_loss(strong_features, head_h, weak_features):
    """Negative mean cosine similarity between h(v) and detached z.

    Returns (loss, n_degenerate) where n_degenerate counts rows whose norm
    was clamped at NORM_EPS (reported, not fatal).
    """
    z = weak_features.detach()
    hv = head_h(strong_features)
    hv_norm, deg_a = _clamped_norms(hv)
    z_norm, deg_b = _clamped_norms(z)
    cos = ((hv / hv_norm) * (z / z_norm)).sum(dim=1)
    return -cos.mean(), deg_a + deg_b


def mse_ssl_loss(strong_features, head_h, weak_features):
    """Mean squared error between h(v) and detached z, averaged over m*d."""
    z = weak_features.detach()
    hv = head_h(strong_features)
    return ((hv - z) ** 2).sum(dim=1).mean() / hv.shape[1]


def softmax_ssl_loss(strong_features, head_h, weak_features, temperature):
    """Cross-entropy H(softmax(h(v)), softmax(z / temperature)) with detached z.

    The student-side distribution softmax(h(v)) is the first (weighting)
    argument, exactly as in the ablation definition, so gradient also flows
    through it.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be > 0")
    z = weak_features.detach()
    hv = head_h(strong_features)
    p = F.softmax(hv, dim=1)
    logq = F.log_softmax(z / temperature, dim=1)
    return -(p * logq).sum(dim=1).mean()


def weight_decay_term(param_groups, w_d):
    """w_d * 1/2 * (|theta_f|^2 + |theta_g|^2 + |theta_h|^2), trainable params only."""
    total = None
    for params in param_groups.values():
        for p in params:
            sq = (p ** 2).sum()
            total = sq if total is None else total + sq
    if total is None:
        return torch.tensor(0.0)
    return 0.5 * w_d * total


def total_loss(l_l, l_p, l_s, w_s, l_wd):
    return l_l + l_p + w_s * l_s + l_wd
