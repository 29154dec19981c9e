"""Composite training objective."""

from __future__ import annotations

import math

from .errors import TrainingError


def total_loss(l_ce, l_mda_f, l_mda_o, l_cac, cfg):
    """``L_CE + lambda_f*L_MDA_f + lambda_o*L_MDA_o + lambda_c*L_CAC``.

    Components switched off in ``cfg`` (``fda``, ``oda``, and contrastive
    learning when neither ``pcl`` nor ``cpcl`` is set) contribute exactly 0.
    Works on python floats and on torch tensors alike.
    """
    parts = {"L_CE": l_ce, "L_MDA_f": l_mda_f, "L_MDA_o": l_mda_o, "L_CAC": l_cac}
    for name, value in parts.items():
        v = float(value.detach()) if hasattr(value, "detach") else float(value)
        if not math.isfinite(v):
            raise TrainingError(f"non-finite loss component {name}={v}; aborting")
    total = l_ce
    if cfg.fda:
        total = total + cfg.lambda_f * l_mda_f
    if cfg.oda:
        total = total + cfg.lambda_o * l_mda_o
    if cfg.pcl or cfg.cpcl:
        total = total + cfg.lambda_c * l_cac
    return total
