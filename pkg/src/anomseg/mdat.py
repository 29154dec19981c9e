"""Multi-source domain adversarial training.

Two domain classifiers look at the same network from two depths: the
feature classifier sees the coarsest fused encoder map, the output
classifier sees the predicted anomaly-probability map. Domain labels are
``tau`` for domain V and ``1 - tau`` for domain A, with ``tau`` sliding
linearly from ``tau_base`` to 0.5 over training (dynamic label smoothing).

Training alternates two phases per iteration: the classifiers are fitted
with true-target least squares on detached inputs, then the network is
updated with the swapped-target (confusion) loss while the classifiers are
frozen.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .dissim_net import ce_loss
from .errors import ConfigError
from .objective import total_loss


@dataclass(frozen=True)
class SmoothingSchedule:
    tau_base: float = 1.0
    max_iters: int = 1

    def __post_init__(self):
        if not 0.5 <= self.tau_base <= 1.0:
            raise ConfigError(f"tau_base must lie in [0.5, 1], got {self.tau_base}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")


def tau(i: int, sched: SmoothingSchedule) -> float:
    if i < 0:
        raise ValueError(f"iteration must be >= 0, got {i}")
    if i > sched.max_iters:
        warnings.warn(f"iteration {i} beyond max_iters {sched.max_iters}; tau clamped to 0.5")
        return 0.5
    if i == sched.max_iters:
        return 0.5
    return sched.tau_base - (sched.tau_base - 0.5) * i / sched.max_iters


def domain_label_maps(t: float, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Target maps ``(Y_V, Y_A)`` filled with ``t`` and ``1 - t``."""
    return torch.full_like(like, t), torch.full_like(like, 1.0 - t)


class DomainClassifier(nn.Module):
    """Stack of 3x3 stride-1 convolutions ending in a 1-channel sigmoid map.

    ``feature`` kind: widths ic/2, ic/4, ic/8, 1. ``output`` kind: widths
    32, 64, 128, 256, 1. ReLU after every layer but the last.
    """

    OUTPUT_WIDTHS = (32, 64, 128, 256, 1)

    def __init__(self, kind: str, in_channels: int, stem: bool = False):
        super().__init__()
        self.kind = kind
        self.in_channels = in_channels
        self.stem = None
        if kind == "feature":
            ic = in_channels
            if ic % 8:
                if not stem or ic < 8:
                    raise ConfigError(
                        f"feature domain classifier needs input channels divisible by 8, got {ic}"
                    )
                ic = 8 * (ic // 8)
                self.stem = nn.Conv2d(in_channels, ic, 1)
            widths = (ic // 2, ic // 4, ic // 8, 1)
            cin = ic
        elif kind == "output":
            widths = self.OUTPUT_WIDTHS
            cin = in_channels
        else:
            raise ConfigError(f"classifier kind must be 'feature' or 'output', got {kind!r}")
        self.widths = widths
        layers = []
        for j, w in enumerate(widths):
            layers.append(nn.Conv2d(cin, w, 3, padding=1))
            if j < len(widths) - 1:
                layers.append(nn.ReLU())
            cin = w
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        if self.stem is not None:
            x = self.stem(x)
        return torch.sigmoid(self.body(x))


def classify_domain(clf: DomainClassifier, x: torch.Tensor) -> torch.Tensor:
    return clf(x)


def _per_example_sq(p: torch.Tensor, y) -> torch.Tensor:
    if torch.is_tensor(y) and y.shape != p.shape:
        raise ValueError(f"prediction {tuple(p.shape)} and target {tuple(y.shape)} shapes differ")
    # spatial (and channel) mean per example, then mean over examples
    return ((p - y) ** 2).flatten(1).mean(1).mean()


def _check_pair(p_v, p_a):
    if p_v.shape != p_a.shape:
        raise ValueError(f"domain maps differ in shape: V {tuple(p_v.shape)} vs A {tuple(p_a.shape)}")


def mda_confusion_loss(p_v, p_a, y_v, y_a) -> torch.Tensor:
    """Swapped-target least squares: V predictions pulled to A's label and vice versa."""
    _check_pair(p_v, p_a)
    return _per_example_sq(p_v, y_a) + _per_example_sq(p_a, y_v)


def mda_discriminator_loss(p_v, p_a, y_v, y_a) -> torch.Tensor:
    _check_pair(p_v, p_a)
    return _per_example_sq(p_v, y_v) + _per_example_sq(p_a, y_a)


@dataclass
class AdversarialOptions:
    lambda_f: float = 0.04
    lambda_o: float = 0.06
    lambda_c: float = 0.1
    oda: bool = True
    fda: bool = True
    dls: bool = True
    pcl: bool = False
    cpcl: bool = False
    output_pool: int = 4


def output_classifier_input(prob: torch.Tensor, pool: int) -> torch.Tensor:
    return F.avg_pool2d(prob, pool) if pool > 1 else prob


def split_domains(domains) -> tuple[torch.Tensor, torch.Tensor]:
    domains = list(domains)
    idx_v = torch.tensor([k for k, d in enumerate(domains) if d == "V"], dtype=torch.long)
    idx_a = torch.tensor([k for k, d in enumerate(domains) if d == "A"], dtype=torch.long)
    if len(idx_v) == 0 or len(idx_a) == 0:
        raise ValueError("adversarial step needs samples from both domains V and A")
    if len(idx_v) != len(idx_a):
        raise ValueError(f"unbalanced batch: {len(idx_v)} V vs {len(idx_a)} A samples")
    return idx_v, idx_a


def discriminator_phase(feat, out_in, idx_v, idx_a, d_feat, d_out, disc_opt, t, opts) -> dict:
    """Fit the classifiers on detached inputs. Returns the phase losses."""
    report = {"L_D_f": 0.0, "L_D_o": 0.0}
    if not (opts.fda or opts.oda):
        return report
    disc_opt.zero_grad(set_to_none=True)
    loss = 0
    if opts.fda:
        p = d_feat(feat.detach())
        y_v, y_a = domain_label_maps(t, p[idx_v])
        l_f = mda_discriminator_loss(p[idx_v], p[idx_a], y_v, y_a)
        loss = loss + l_f
        report["L_D_f"] = float(l_f.detach())
    if opts.oda:
        p = d_out(out_in.detach())
        y_v, y_a = domain_label_maps(t, p[idx_v])
        l_o = mda_discriminator_loss(p[idx_v], p[idx_a], y_v, y_a)
        loss = loss + l_o
        report["L_D_o"] = float(l_o.detach())
    loss.backward()
    disc_opt.step()
    return report


def model_phase(out, feat, out_in, gt, idx_v, idx_a, d_feat, d_out, model_opt, t, opts, contrastive=None) -> dict:
    """Update the network with CE + confusion (+ contrastive) while classifiers stay frozen."""
    frozen = [p for p in list(d_feat.parameters()) + list(d_out.parameters()) if p.requires_grad]
    for p in frozen:
        p.requires_grad_(False)
    try:
        model_opt.zero_grad(set_to_none=True)
        l_ce = ce_loss(out.logits, gt)
        zero = l_ce.new_zeros(())
        l_f = l_o = l_cac = zero
        if opts.fda:
            p = d_feat(feat)
            y_v, y_a = domain_label_maps(t, p[idx_v])
            l_f = mda_confusion_loss(p[idx_v], p[idx_a], y_v, y_a)
        if opts.oda:
            p = d_out(out_in)
            y_v, y_a = domain_label_maps(t, p[idx_v])
            l_o = mda_confusion_loss(p[idx_v], p[idx_a], y_v, y_a)
        if contrastive is not None and (opts.pcl or opts.cpcl):
            l_cac = contrastive(out)
        loss = total_loss(l_ce, l_f, l_o, l_cac, opts)
        loss.backward()
        model_opt.step()
    finally:
        for p in frozen:
            p.requires_grad_(True)
    comps = {k: float(v.detach()) for k, v in (("L_CE", l_ce), ("L_MDA_f", l_f), ("L_MDA_o", l_o), ("L_CAC", l_cac))}
    comps["L_total"] = float(total_loss(comps["L_CE"], comps["L_MDA_f"], comps["L_MDA_o"], comps["L_CAC"], opts))
    return comps


def adversarial_step(model, d_feat, d_out, batch, i, sched, opts, model_opt, disc_opt, contrastive=None) -> dict:
    """One alternating update: classifiers first, then the network.

    ``batch`` holds the network input tensors plus ``gt`` and ``domain``
    (a sequence of 'V'/'A'). ``contrastive`` optionally maps the network
    output to the raw contrastive loss, weighted here by ``lambda_c``.
    """
    if opts.fda or opts.oda or opts.pcl or opts.cpcl:
        idx_v, idx_a = split_domains(batch["domain"])
    else:
        idx_v = idx_a = None  # plain CE training, single-domain batches allowed
    t = tau(i, sched) if opts.dls else sched.tau_base
    out = model(batch["image"], batch["recon"], batch["semantic"], batch["uncertainty"])
    feat = out.coarsest_fused
    out_in = output_classifier_input(out.prob, opts.output_pool)
    report = {"iteration": i, "tau": t}
    report.update(discriminator_phase(feat, out_in, idx_v, idx_a, d_feat, d_out, disc_opt, t, opts))
    report.update(model_phase(out, feat, out_in, batch["gt"], idx_v, idx_a, d_feat, d_out, model_opt, t, opts,
                              contrastive))
    return report
