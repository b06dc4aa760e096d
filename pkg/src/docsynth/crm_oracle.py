"""Loop-by-loop reference for the CRM forward pass, and the self-check suite.

Nothing here calls into ``crm``'s numeric helpers: every convolution, norm
and activation is re-derived with scalar Python arithmetic so disagreements
point at real bugs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import crm
from .crm import CrmConfig, CrmParams


def naive_conv(x, w, bias, d):
    """Six nested loops; zero padding ``d * (k - 1) / 2`` keeps H x W."""
    c_in, H, W = x.shape
    c_out, _, k, _ = w.shape
    p = d * (k - 1) // 2
    out = np.zeros((c_out, H, W))
    for o in range(c_out):
        for r in range(H):
            for c in range(W):
                acc = 0.0 if bias is None else float(bias[o])
                for ci in range(c_in):
                    for i in range(k):
                        for j in range(k):
                            rr, cc = r - p + i * d, c - p + j * d
                            if 0 <= rr < H and 0 <= cc < W:
                                acc += w[o, ci, i, j] * x[ci, rr, cc]
                out[o, r, c] = acc
    return out


def _gelu(v):
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def _sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def _bn(v, bn, ch, eps):
    return (v - bn.mean[ch]) / math.sqrt(bn.var[ch] + eps) * bn.gamma[ch] + bn.beta[ch]


def naive_crm(x, p: CrmParams, cfg: CrmConfig):
    x = np.asarray(x, dtype=np.float64)
    C, H, W = x.shape
    co = p.shared_kernel.shape[0]
    branches = []
    for b, d in enumerate(cfg.dilations):
        bn = p.branch_bn[0 if cfg.shared_bn else b]
        conv = naive_conv(x, p.shared_kernel, p.conv_bias, d)
        f = np.zeros_like(conv)
        for ch in range(co):
            for r in range(H):
                for c in range(W):
                    f[ch, r, c] = _gelu(_bn(conv[ch, r, c], bn, ch, p.eps))
        branches.append(f)
    f_hat = np.concatenate(branches, axis=0)
    nc = f_hat.shape[0]
    gated = np.zeros_like(f_hat)
    for ch in range(nc):
        for r in range(H):
            for c in range(W):
                z = f_hat[ch, r, c] * p.gate_weight[ch] + p.gate_bias[ch]
                m = _sigmoid(_gelu(_bn(z, p.gate_bn, ch, p.eps)))
                gated[ch, r, c] = m * f_hat[ch, r, c]
    out = np.zeros_like(x)
    for o in range(C):
        for r in range(H):
            for c in range(W):
                acc = float(p.out_bias[o])
                for ch in range(nc):
                    acc += p.out_weight[o, ch] * gated[ch, r, c]
                out[o, r, c] = x[o, r, c] + _gelu(_bn(acc, p.out_bn, o, p.eps))
    return out


def naive_gate(f_hat, p: CrmParams):
    nc, H, W = f_hat.shape
    m = np.zeros_like(f_hat)
    for ch in range(nc):
        for r in range(H):
            for c in range(W):
                z = f_hat[ch, r, c] * p.gate_weight[ch] + p.gate_bias[ch]
                m[ch, r, c] = _sigmoid(_gelu(_bn(z, p.gate_bn, ch, p.eps)))
    return m


def rel_error(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return float("inf")
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if a.size else 0.0


@dataclass
class Check:
    name: str
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.deviation <= self.tolerance


def run_selfcheck(presets=("global", "block"), cases: int = 20, seed: int = 0, fault: str | None = None) -> list[Check]:
    """Invariant suite: oracle agreement, shape, gate range, shortcut, group locality.

    ``fault="padding"`` perturbs the convolution padding to prove the suite
    notices.
    """
    rng = np.random.default_rng(seed)
    pad_fault = fault == "padding"
    checks: list[Check] = []

    def forward(x, p, cfg):
        if not pad_fault:
            return crm.crm_forward(x, p, cfg)
        try:
            return crm.crm_forward(x, p, cfg, padding=cfg.dilations[0] * (cfg.k - 1) // 2 + 1)
        except ValueError:
            return np.full(np.add(x.shape, (0, 2, 2)), np.nan)

    for name in presets:
        cfg = CrmConfig.preset(name)
        worst_oracle = worst_shape = 0.0
        gate_viol = 0.0
        for _ in range(max(1, cases // len(presets))):
            c = int(rng.integers(1, 5))
            h, w = int(rng.integers(3, 10)), int(rng.integers(3, 10))
            x = rng.normal(0, 1, (c, h, w))
            p = CrmParams.random(c, cfg, rng)
            got = forward(x, p, cfg)
            worst_shape = max(worst_shape, 0.0 if got.shape == x.shape else 1.0)
            worst_oracle = max(worst_oracle, rel_error(got, naive_crm(x, p, cfg)))
            f_hat = np.concatenate([crm.branch_forward(x, p, d, i) for i, d in enumerate(cfg.dilations)])
            m = crm.gate_mask(f_hat, p)
            gate_viol = max(gate_viol, float(np.sum((m <= 0) | (m >= 1))))
        checks.append(Check(f"{name}: oracle relative error", worst_oracle, 1e-10))
        checks.append(Check(f"{name}: shape mismatches", worst_shape, 0.0))
        checks.append(Check(f"{name}: gate values outside (0,1)", gate_viol, 0.0))

        # zeroed output path with identity norm: module collapses to the input
        c = 3
        x = rng.normal(0, 1, (c, 6, 7))
        p = CrmParams.random(c, cfg, rng)
        p = replace(p, out_weight=np.zeros_like(p.out_weight), out_bias=np.zeros(c), out_bn=crm.BatchNorm.identity(c))
        y = forward(x, p, cfg)
        dev = float(np.max(np.abs(y - x))) if y.shape == x.shape else float("inf")
        checks.append(Check(f"{name}: shortcut identity max |diff|", dev, 0.0))

        # gate channel j sees only channel j
        p = CrmParams.random(c, cfg, rng)
        f_hat = rng.normal(0, 1, (cfg.n * c, 5, 5))
        base = crm.gate_mask(f_hat, p)
        leak = 0.0
        for j in range(f_hat.shape[0]):
            bumped = f_hat.copy()
            bumped[j] += rng.normal(0, 1, bumped[j].shape)
            diff = np.abs(crm.gate_mask(bumped, p) - base)
            diff[j] = 0.0
            leak = max(leak, float(diff.max()))
        checks.append(Check(f"{name}: gate cross-channel leakage", leak, 0.0))
    for c in checks:
        if math.isnan(c.deviation):
            c.deviation = float("inf")
    return checks
