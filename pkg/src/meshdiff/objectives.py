"""Training losses: clean-state cross-entropy for the mask and uniform tasks,
binary correctness-classifier loss, shared-vertex connection loss, and the
unit-weight total."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass
class LossBreakdown:
    l_mask: float
    l_uniform: float
    l_phi: float
    l_connection: float
    total: float

    @staticmethod
    def from_terms(l_mask, l_uniform, l_phi, l_connection) -> "LossBreakdown":
        def scalar(v):
            return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)

        parts = {
            "l_mask": scalar(l_mask),
            "l_uniform": scalar(l_uniform),
            "l_phi": scalar(l_phi),
            "l_connection": scalar(l_connection),
        }
        for name, value in parts.items():
            if value != value or value in (float("inf"), float("-inf")):
                raise ValueError(f"non-finite loss term: {name}")
        return LossBreakdown(total=sum(parts.values()), **parts)


def ce_clean_loss(token_logits: torch.Tensor, x1: torch.Tensor, valid=None) -> torch.Tensor:
    """Mean token-level cross-entropy against the clean tokens over non-PAD
    positions. token_logits: (..., S, B); x1: (..., S)."""
    logits = token_logits.reshape(-1, token_logits.shape[-1])
    target = x1.reshape(-1)
    if logits.shape[0] != target.shape[0]:
        raise ValueError("logits/targets shape mismatch")
    if valid is not None:
        keep = valid.reshape(-1)
        logits = logits[keep]
        target = target[keep]
    return F.cross_entropy(logits, target)


def classifier_loss(
    correctness_logits: torch.Tensor,
    x_pred: torch.Tensor,
    x1: torch.Tensor,
    valid=None,
) -> torch.Tensor:
    """Binary cross-entropy of sigmoid(correctness_logits) against per-position
    token-equality labels (1 where the sampled prediction matches x1)."""
    logits = correctness_logits.reshape(-1)
    if logits.shape[0] != x_pred.reshape(-1).shape[0]:
        raise ValueError("logits/prediction shape mismatch")
    labels = (x_pred.reshape(-1) == x1.reshape(-1)).to(logits.dtype)
    if valid is not None:
        keep = valid.reshape(-1)
        logits = logits[keep]
        labels = labels[keep]
    return F.binary_cross_entropy_with_logits(logits, labels)


def connection_loss(token_logits: torch.Tensor, groups) -> torch.Tensor:
    """Consensus penalty over shared-vertex groups: for each group and each
    coordinate dimension j, the mean L1 distance of member logit rows from
    their mean; averaged over j, then over all groups. token_logits is a
    single item's (S, B) matrix; `groups` is a VertexGroups or a list of
    offset arrays."""
    offsets_list = getattr(groups, "groups", groups)
    if len(offsets_list) == 0:
        return token_logits.sum() * 0.0
    s = token_logits.shape[0]
    per_group = []
    for offs in offsets_list:
        offs = torch.as_tensor(offs, dtype=torch.long, device=token_logits.device)
        if int(offs.max()) + 2 >= s:
            raise ValueError("group offset out of range")
        dims = []
        for j in range(3):
            members = token_logits[offs + j]          # (k, B)
            consensus = members.mean(dim=0, keepdim=True)
            dims.append((members - consensus).abs().sum(dim=-1).mean())
        per_group.append(torch.stack(dims).mean())
    return torch.stack(per_group).mean()


def batch_connection_loss(token_logits: torch.Tensor, groups_per_item) -> torch.Tensor:
    """Eq. over a batch: mean of group-level losses across all groups of all
    items. token_logits: (b, S, B)."""
    per_group = []
    for item_logits, groups in zip(token_logits, groups_per_item):
        offsets_list = getattr(groups, "groups", groups)
        for offs in offsets_list:
            per_group.append(connection_loss(item_logits, [offs]))
    if not per_group:
        return token_logits.sum() * 0.0
    return torch.stack(per_group).mean()


def total_loss(l_mask, l_uniform, l_phi, l_connection) -> LossBreakdown:
    return LossBreakdown.from_terms(l_mask, l_uniform, l_phi, l_connection)
