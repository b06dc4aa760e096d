"""Forward pass of the Controllable Receptive Module on (C, H, W) float64 arrays.

One shared k x k kernel is run at several dilation rates; each branch goes
through inference-mode batch norm and exact GELU. The branches are
concatenated, re-weighted by a sigmoid gate computed with a depthwise
(groups = channels) 1x1 conv, projected back to C channels by a 1x1 conv and
added to the input.

The deep "local" stage of the backbone uses a plain bottleneck and has no
counterpart here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf, expit

PRESETS = {"global": (5, (1, 2, 3)), "block": (3, (1, 2, 3))}


@dataclass(frozen=True)
class CrmConfig:
    k: int = 3
    dilations: tuple[int, ...] = (1, 2, 3)
    shared_bn: bool = False

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.k}")
        if not self.dilations or any(d < 1 for d in self.dilations) or len(set(self.dilations)) != len(self.dilations):
            raise ValueError(f"dilations must be distinct positive ints, got {self.dilations}")

    @classmethod
    def preset(cls, name: str, shared_bn: bool = False) -> "CrmConfig":
        try:
            k, d = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        return cls(k, d, shared_bn)

    @property
    def n(self) -> int:
        return len(self.dilations)


@dataclass
class BatchNorm:
    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.mean, self.var, self.gamma, self.beta = (np.asarray(a, dtype=np.float64) for a in (self.mean, self.var, self.gamma, self.beta))
        if np.any(self.var <= 0):
            raise ValueError("batch-norm variance must be positive")

    @classmethod
    def identity(cls, c: int) -> "BatchNorm":
        return cls(np.zeros(c), np.ones(c), np.ones(c), np.zeros(c))

    @classmethod
    def random(cls, c: int, rng) -> "BatchNorm":
        return cls(rng.normal(0, 0.3, c), rng.uniform(0.5, 2.0, c), rng.uniform(0.5, 1.5, c), rng.normal(0, 0.2, c))

    def __call__(self, x: np.ndarray, eps: float = 0.0) -> np.ndarray:
        if x.shape[0] != self.mean.shape[0]:
            raise ValueError(f"batch norm over {self.mean.shape[0]} channels got {x.shape[0]}")
        s = (slice(None), None, None)
        return (x - self.mean[s]) / np.sqrt(self.var[s] + eps) * self.gamma[s] + self.beta[s]


@dataclass
class CrmParams:
    """Weights and statistics for one module.

    ``shared_kernel`` is (C_out, C_in, k, k); the gate is one weight and bias
    per concatenated channel; ``out_weight`` is (C_in, n * C_out).
    """

    shared_kernel: np.ndarray
    conv_bias: np.ndarray
    branch_bn: list[BatchNorm]
    gate_weight: np.ndarray
    gate_bias: np.ndarray
    gate_bn: BatchNorm
    out_weight: np.ndarray
    out_bias: np.ndarray
    out_bn: BatchNorm
    eps: float = 0.0

    @property
    def c_out(self) -> int:
        return self.shared_kernel.shape[0]

    @property
    def c_in(self) -> int:
        return self.shared_kernel.shape[1]

    def check(self, cfg: CrmConfig) -> None:
        co, ci, kh, kw = self.shared_kernel.shape
        nc = cfg.n * co
        if (kh, kw) != (cfg.k, cfg.k):
            raise ValueError(f"kernel is {kh}x{kw}, config expects {cfg.k}x{cfg.k}")
        if len(self.branch_bn) != (1 if cfg.shared_bn else cfg.n):
            raise ValueError(f"expected {1 if cfg.shared_bn else cfg.n} branch norms, got {len(self.branch_bn)}")
        if self.conv_bias.shape != (co,) or self.gate_weight.shape != (nc,) or self.gate_bias.shape != (nc,):
            raise ValueError("conv/gate parameter shapes disagree with the config")
        if self.out_weight.shape != (ci, nc) or self.out_bias.shape != (ci,):
            raise ValueError(f"out projection must be ({ci}, {nc}), got {self.out_weight.shape}")

    @classmethod
    def random(cls, c: int, cfg: CrmConfig, rng, c_out: int | None = None) -> "CrmParams":
        rng = np.random.default_rng(rng)
        co = c if c_out is None else c_out
        nc = cfg.n * co
        scale = 1.0 / np.sqrt(c * cfg.k * cfg.k)
        return cls(
            shared_kernel=rng.normal(0, scale, (co, c, cfg.k, cfg.k)),
            conv_bias=rng.normal(0, 0.1, co),
            branch_bn=[BatchNorm.random(co, rng) for _ in range(1 if cfg.shared_bn else cfg.n)],
            gate_weight=rng.normal(0, 1.0, nc),
            gate_bias=rng.normal(0, 0.1, nc),
            gate_bn=BatchNorm.random(nc, rng),
            out_weight=rng.normal(0, 1.0 / np.sqrt(nc), (c, nc)),
            out_bias=rng.normal(0, 0.1, c),
            out_bn=BatchNorm.random(c, rng),
        )

    def to_dict(self) -> dict:
        bn = lambda b: {"mean": b.mean.tolist(), "var": b.var.tolist(), "gamma": b.gamma.tolist(), "beta": b.beta.tolist()}
        return {
            "eps": self.eps,
            "shared_kernel": self.shared_kernel.tolist(),
            "conv_bias": self.conv_bias.tolist(),
            "branch_bn": [bn(b) for b in self.branch_bn],
            "gate_weight": self.gate_weight.tolist(),
            "gate_bias": self.gate_bias.tolist(),
            "gate_bn": bn(self.gate_bn),
            "out_weight": self.out_weight.tolist(),
            "out_bias": self.out_bias.tolist(),
            "out_bn": bn(self.out_bn),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrmParams":
        arr = lambda v: np.asarray(v, dtype=np.float64)
        bn = lambda b: BatchNorm(b["mean"], b["var"], b["gamma"], b["beta"])
        return cls(
            shared_kernel=arr(d["shared_kernel"]),
            conv_bias=arr(d["conv_bias"]),
            branch_bn=[bn(b) for b in d["branch_bn"]],
            gate_weight=arr(d["gate_weight"]),
            gate_bias=arr(d["gate_bias"]),
            gate_bn=bn(d["gate_bn"]),
            out_weight=arr(d["out_weight"]),
            out_bias=arr(d["out_bias"]),
            out_bn=bn(d["out_bn"]),
            eps=float(d.get("eps", 0.0)),
        )


def save_params(params: CrmParams, cfg: CrmConfig, path) -> None:
    doc = {"config": {"k": cfg.k, "dilations": list(cfg.dilations), "shared_bn": cfg.shared_bn}, "params": params.to_dict()}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_params(path) -> tuple[CrmParams, CrmConfig]:
    doc = json.loads(Path(path).read_text())
    c = doc["config"]
    cfg = CrmConfig(int(c["k"]), tuple(int(d) for d in c["dilations"]), bool(c.get("shared_bn", False)))
    params = CrmParams.from_dict(doc["params"])
    params.check(cfg)
    return params, cfg


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def dilated_conv(x: np.ndarray, weights: np.ndarray, k: int, d: int, bias: np.ndarray | None = None, padding: int | None = None) -> np.ndarray:
    """Zero-padded dilated cross-correlation keeping the spatial size.

    ``padding`` overrides the default ``d * (k - 1) // 2`` (fault injection only).
    """
    x = np.asarray(x, dtype=np.float64)
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if x.ndim != 3 or weights.ndim != 4 or weights.shape[1] != x.shape[0] or weights.shape[2:] != (k, k):
        raise ValueError(f"conv weights {weights.shape} incompatible with input {x.shape} and k={k}")
    pad = d * (k - 1) // 2 if padding is None else padding
    _, H, W = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = H + 2 * pad - d * (k - 1), W + 2 * pad - d * (k - 1)
    out = np.zeros((weights.shape[0], Ho, Wo))
    for i in range(k):
        for j in range(k):
            patch = xp[:, i * d : i * d + Ho, j * d : j * d + Wo]
            out += np.tensordot(weights[:, :, i, j], patch, axes=(1, 0))
    if bias is not None:
        out += np.asarray(bias)[:, None, None]
    return out


def branch_forward(x: np.ndarray, params: CrmParams, d: int, branch: int = 0, padding: int | None = None) -> np.ndarray:
    k = params.shared_kernel.shape[-1]
    bn = params.branch_bn[branch if len(params.branch_bn) > 1 else 0]
    return gelu(bn(dilated_conv(x, params.shared_kernel, k, d, params.conv_bias, padding), params.eps))


def gate_mask(f_hat: np.ndarray, params: CrmParams) -> np.ndarray:
    """Sigmoid mask from a per-channel (depthwise) 1x1 conv of the fused features."""
    if f_hat.shape[0] != params.gate_weight.shape[0]:
        raise ValueError(f"gate expects {params.gate_weight.shape[0]} channels, got {f_hat.shape[0]}")
    s = (slice(None), None, None)
    z = f_hat * params.gate_weight[s] + params.gate_bias[s]
    return expit(gelu(params.gate_bn(z, params.eps)))


def crm_forward(x: np.ndarray, params: CrmParams, cfg: CrmConfig, padding: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    params.check(cfg)
    if x.ndim != 3 or x.shape[0] != params.c_in:
        raise ValueError(f"input {x.shape} does not match {params.c_in} input channels")
    f_hat = np.concatenate([branch_forward(x, params, d, i, padding) for i, d in enumerate(cfg.dilations)], axis=0)
    m = gate_mask(f_hat, params)
    proj = np.tensordot(params.out_weight, m * f_hat, axes=(1, 0)) + params.out_bias[:, None, None]
    y = gelu(params.out_bn(proj, params.eps))
    if y.shape != x.shape:
        raise ValueError(f"module output {y.shape} does not match input {x.shape}")
    return x + y
