"""Projectors and the multi-grained feature decorrelation objective.

Every loss takes ``[N][D]`` projection matrices, one per positive copy of the
batch (row ``n`` of every copy is the same sample).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn


@dataclass
class LossWeights:
    tau: float = 0.5
    kappa: float = 5.0
    eta: float = 5e-4
    gamma: float = 1.0
    epsilon: float = 1e-4
    mu: float = 1.0
    lam: float = 1e-3
    # scale on the auto-covariance term; 1 everywhere except collapse ablations
    autocov: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not (v >= 0 and v != float("inf")):
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ProjectionSet:
    z_t: Tensor
    z_s: Tensor
    z: Tensor

    def __post_init__(self):
        n = {self.z_t.shape[0], self.z_s.shape[0], self.z.shape[0]}
        if len(n) != 1:
            raise ValueError(f"projection matrices disagree on batch size: {sorted(n)}")


class Projector(nn.Module):
    """Linear-BN-ReLU, Linear-BN-ReLU, Linear."""

    def __init__(self, dim_in: int, dim_out: int, batch_norm: bool = True):
        super().__init__()
        norm = (lambda: nn.BatchNorm1d(dim_out)) if batch_norm else nn.Identity
        self.net = nn.Sequential(
            nn.Linear(dim_in, dim_out), norm(), nn.ReLU(),
            nn.Linear(dim_out, dim_out), norm(), nn.ReLU(),
            nn.Linear(dim_out, dim_out),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class Projectors(nn.Module):
    """Temporal, spatial and instance projectors (output dims C_p, C_p, 2*C_p)."""

    def __init__(self, repr_dim: int, proj_dim: int, batch_norm: bool = True):
        super().__init__()
        self.temporal = Projector(repr_dim, proj_dim, batch_norm)
        self.spatial = Projector(repr_dim, proj_dim, batch_norm)
        self.instance = Projector(2 * repr_dim, 2 * proj_dim, batch_norm)

    def forward(self, h_t: Tensor, h_s: Tensor) -> ProjectionSet:
        if self.training and h_t.shape[0] < 2:
            raise ValueError("projectors need a batch of at least 2 samples for batch statistics")
        return ProjectionSet(self.temporal(h_t), self.spatial(h_s), self.instance(torch.cat([h_t, h_s], dim=-1)))


def _off_diagonal(m: Tensor) -> Tensor:
    d = m.shape[-1]
    return m.masked_select(~torch.eye(d, dtype=torch.bool, device=m.device))


def _as_stack(zs) -> Tensor:
    zs = [torch.as_tensor(z) for z in zs]
    z = torch.stack(zs)
    return z[:, None, :] if z.ndim == 2 else z


def loss_con(zs: Sequence[Tensor], kappa: float, eta: float) -> Tensor:
    """Intra-sample consistency over K aligned copies, averaged over batch rows.

    Per row: ``(1/K) sum_a [kappa*||z_a - mean_b z_b|| + eta*sum_{b!=a}(1 - cos(z_a, z_b))]``.
    """
    z = _as_stack(zs)  # [K][N][D]
    K = z.shape[0]
    if K < 2:
        raise ValueError("consistency needs at least 2 copies")
    total = z.new_zeros(z.shape[1])
    if kappa:
        total = total + kappa * torch.linalg.vector_norm(z - z.mean(dim=0), dim=-1).sum(dim=0)
    if eta:
        norms = torch.linalg.vector_norm(z, dim=-1, keepdim=True)
        if bool((norms == 0).any()):
            raise ValueError("zero-norm projection row in consistency term")
        zh = z / norms
        # 1 - cos(a, b) written as |zh_a - zh_b|^2 / 2: exactly zero for identical rows
        gap = (zh[:, None] - zh[None]).pow(2).sum(dim=-1) / 2
        off = ~torch.eye(K, dtype=torch.bool, device=z.device)
        total = total + eta * gap[off].sum(dim=0)
    return (total / K).mean()


def term_variance(z: Tensor, gamma: float, epsilon: float) -> Tensor:
    std = torch.sqrt(z.var(dim=0, unbiased=True) + epsilon)
    return F.relu(gamma - std).mean()


def term_autocov(z: Tensor) -> Tensor:
    n, d = z.shape
    zc = z - z.mean(dim=0)
    cov = zc.T @ zc / (n - 1)
    return _off_diagonal(cov).pow(2).sum() / d


def term_xcorr(z_a: Tensor, z_b: Tensor) -> Tensor:
    if z_a.shape != z_b.shape:
        raise ValueError(f"cross-correlation needs equal shapes, got {tuple(z_a.shape)} and {tuple(z_b.shape)}")
    cols = []
    for z in (z_a, z_b):
        zc = z - z.mean(dim=0)
        norm = torch.linalg.vector_norm(zc, dim=0)
        if bool((norm == 0).any()):
            raise ValueError("collapsed dimension: zero-norm column after centering in cross-correlation")
        cols.append(zc / norm)
    return _off_diagonal(cols[0].T @ cols[1]).pow(2).sum()


def _sep_parts(zs: Sequence[Tensor], w: LossWeights) -> tuple[Tensor, Tensor, Tensor]:
    zero = torch.as_tensor(zs[0]).new_zeros(())
    var, ac, xc = zero, zero, zero
    for a, za in enumerate(zs):
        if w.mu:
            var = var + w.mu * term_variance(za, w.gamma, w.epsilon)
        if w.autocov:
            ac = ac + w.autocov * term_autocov(za)
        if w.lam:
            for zb in zs[a + 1:]:
                xc = xc + w.lam * term_xcorr(za, zb)
    return var, ac, xc


def loss_sep(zs: Sequence[Tensor], w: LossWeights) -> Tensor:
    """``sum_a [mu*V(Z_a) + AC(Z_a) + lam*sum_{b>a} XC(Z_a, Z_b)]``; zero-weight terms are skipped."""
    var, ac, xc = _sep_parts([torch.as_tensor(z) for z in zs], w)
    return var + ac + xc


def loss_fd(zs: Sequence[Tensor], w: LossWeights) -> Tensor:
    return loss_con(zs, w.kappa, w.eta) + loss_sep(zs, w)


@dataclass
class LossBreakdown:
    total: Tensor
    fd_instance: Tensor
    fd_spatial: Tensor
    fd_temporal: Tensor
    # domain-weighted components; they sum to ``total``
    con: Tensor
    var: Tensor
    autocov: Tensor
    xcorr: Tensor

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}


def loss_total(ps_list: Sequence[ProjectionSet], w: LossWeights) -> LossBreakdown:
    """Instance-domain loss plus ``tau`` times the spatial and temporal domain losses."""
    if len(ps_list) < 2:
        raise ValueError("need at least 2 projection sets")
    parts = {}
    for domain, attr in (("instance", "z"), ("spatial", "z_s"), ("temporal", "z_t")):
        zs = [getattr(ps, attr) for ps in ps_list]
        con = loss_con(zs, w.kappa, w.eta)
        parts[domain] = (con, *_sep_parts(zs, w))
    scale = {"instance": 1.0, "spatial": w.tau, "temporal": w.tau}
    fd = {d: p[0] + (p[1] + p[2] + p[3]) for d, p in parts.items()}
    comp = [sum(scale[d] * parts[d][i] for d in parts) for i in range(4)]
    total = fd["instance"] + w.tau * (fd["spatial"] + fd["temporal"])
    return LossBreakdown(total, fd["instance"], fd["spatial"], fd["temporal"], *comp)
