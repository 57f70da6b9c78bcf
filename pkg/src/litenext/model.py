"""LiteNeXt network: LGEMixer feature extractors, residual bottleneck, stage
attention context (GCF), prediction head and the two embedding projectors.

Parameters are plain ``dict[str, Tensor]`` groups held by :class:`ModelParams`:

* ``theta`` main feature extractor (trained)
* ``phi``   target feature extractor (EMA copy of theta, never trained)
* ``tau``   projector S (trained, training-only)
* ``xi``    bottleneck + GCF + head (trained)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import functional as F
from .tensor import ShapeError, Tensor, concat, no_grad, stack, tsum

N_STAGES = 4


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    input_channels: int = 3
    dw_kernel: int = 7
    local_kernel: int = 3
    gcf_dim: int | None = None  # defaults to 8C
    head_channels: int = 128
    context_scale: int = 4  # GCF context resolution = input / context_scale
    proj_reduction: int = 4
    image_size: int = 256
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.gcf_dim is None:
            object.__setattr__(self, "gcf_dim", 8 * self.base_channels)
        if self.image_size % 16:
            raise ValueError(f"image_size must be a multiple of 16, got {self.image_size}")
        if self.context_scale not in (2, 4, 8, 16):
            raise ValueError(f"context_scale must be one of 2, 4, 8, 16, got {self.context_scale}")
        if self.dw_kernel % 2 == 0 or self.local_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        if (8 * self.base_channels) % self.proj_reduction:
            raise ValueError("proj_reduction must divide 8 * base_channels")

    @property
    def stage_channels(self) -> list[int]:
        c = self.base_channels
        return [c, 2 * c, 4 * c, 8 * c]

    @property
    def embed_dim(self) -> int:
        return 8 * self.base_channels

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _param_shapes(cfg: ModelConfig) -> dict[str, dict[str, tuple[int, ...]]]:
    """Shape of every learned tensor, grouped as theta / tau / xi."""
    kl, kd = cfg.local_kernel, cfg.dw_kernel
    theta: dict[str, tuple[int, ...]] = {}
    cin = cfg.input_channels
    for i, cout in enumerate(cfg.stage_channels):
        s = f"stage{i}"
        theta[f"{s}.local.weight"] = (cin, cin, kl, kl)
        theta[f"{s}.local.bias"] = (cin,)
        theta[f"{s}.local_norm.gamma"] = (cin,)
        theta[f"{s}.local_norm.beta"] = (cin,)
        theta[f"{s}.far.weight"] = (cin, 1, kd, kd)
        theta[f"{s}.far.bias"] = (cin,)
        theta[f"{s}.far_norm.gamma"] = (cin,)
        theta[f"{s}.far_norm.beta"] = (cin,)
        theta[f"{s}.mix.weight"] = (cout, cin, 1, 1)
        theta[f"{s}.mix.bias"] = (cout,)
        theta[f"{s}.mix_norm.gamma"] = (cout,)
        theta[f"{s}.mix_norm.beta"] = (cout,)
        cin = cout

    e = cfg.embed_dim
    d = cfg.gcf_dim
    hc = cfg.head_channels
    xi: dict[str, tuple[int, ...]] = {}
    for j in (1, 2):
        xi[f"bottleneck.conv{j}.weight"] = (e, e, 3, 3)
        xi[f"bottleneck.conv{j}.bias"] = (e,)
        xi[f"bottleneck.norm{j}.gamma"] = (e,)
        xi[f"bottleneck.norm{j}.beta"] = (e,)
    for i, c in enumerate(cfg.stage_channels):
        xi[f"gcf.value{i}.weight"] = (d, c, 1, 1)
        xi[f"gcf.value{i}.bias"] = (d,)
    xi["gcf.query.weight"] = (d, e, 1, 1)
    xi["gcf.query.bias"] = (d,)
    xi["head.clg.weight"] = (hc, e + d, 3, 3)
    xi["head.clg.bias"] = (hc,)
    xi["head.norm.gamma"] = (hc,)
    xi["head.norm.beta"] = (hc,)
    xi["head.out.weight"] = (1, hc, 1, 1)
    xi["head.out.bias"] = (1,)

    r = e // cfg.proj_reduction
    tau = {
        "proj.fc1.weight": (r, e),
        "proj.fc1.bias": (r,),
        "proj.fc2.weight": (e, r),
        "proj.fc2.bias": (e,),
    }
    return {"theta": theta, "tau": tau, "xi": xi}


def _init_tensor(name: str, shape: tuple[int, ...], rng: np.random.Generator, dtype) -> np.ndarray:
    if name.endswith(".gamma"):
        return np.ones(shape, dtype)
    if name.endswith((".beta", ".bias")):
        return np.zeros(shape, dtype)
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


GROUPS = ("theta", "phi", "tau", "xi")


@dataclass
class ModelParams:
    cfg: ModelConfig
    theta: dict[str, Tensor] = field(default_factory=dict)
    phi: dict[str, Tensor] = field(default_factory=dict)
    tau: dict[str, Tensor] = field(default_factory=dict)
    xi: dict[str, Tensor] = field(default_factory=dict)

    def group(self, name: str) -> dict[str, Tensor]:
        return getattr(self, name)

    def named(self, groups=GROUPS) -> dict[str, Tensor]:
        """Flat ``group.name -> tensor`` view in a fixed order."""
        return {f"{g}.{k}": t for g in groups for k, t in self.group(g).items()}

    def check_pairing(self) -> None:
        if self.theta.keys() != self.phi.keys():
            raise ValueError("theta and phi hold different parameter names")
        for k, t in self.theta.items():
            if t.shape != self.phi[k].shape:
                raise ShapeError(f"theta/phi shape mismatch for {k}: {t.shape} vs {self.phi[k].shape}")

    def copy(self) -> "ModelParams":
        def dup(d, grad):
            return {k: Tensor(t.data.copy(), requires_grad=grad, name=t.name) for k, t in d.items()}

        return ModelParams(self.cfg, dup(self.theta, True), dup(self.phi, False), dup(self.tau, True), dup(self.xi, True))

    def astype(self, dtype) -> "ModelParams":
        out = self.copy()
        for t in out.named().values():
            t.data = t.data.astype(dtype)
        return out

    @classmethod
    def from_named(cls, named: dict[str, np.ndarray], cfg: ModelConfig | None = None) -> "ModelParams":
        cfg = cfg or infer_config(named)
        p = cls(cfg)
        for full, arr in named.items():
            g, _, k = full.partition(".")
            if g not in GROUPS:
                raise ValueError(f"unknown parameter group in {full!r}")
            p.group(g)[k] = Tensor(np.array(arr), requires_grad=g != "phi", name=full)
        return p


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """He-normal weights, zero biases, unit LayerNorm scales; phi starts as a copy of theta."""
    rng = np.random.default_rng(seed)
    shapes = _param_shapes(cfg)
    p = ModelParams(cfg)
    for g in ("theta", "xi", "tau"):
        for k, shape in shapes[g].items():
            p.group(g)[k] = Tensor(_init_tensor(k, shape, rng, dtype), requires_grad=True, name=f"{g}.{k}")
    p.phi = {k: Tensor(t.data.copy(), name=f"phi.{k}") for k, t in p.theta.items()}
    return p


def infer_config(named: dict[str, np.ndarray], image_size: int = 256, context_scale: int = 4) -> ModelConfig:
    """Recover the architecture hyper-parameters from tensor shapes."""
    s = {k: np.shape(v) for k, v in named.items()}
    c = s["theta.stage0.mix.weight"][0]
    return ModelConfig(
        base_channels=c,
        input_channels=s["theta.stage0.local.weight"][1],
        local_kernel=s["theta.stage0.local.weight"][2],
        dw_kernel=s["theta.stage0.far.weight"][2],
        gcf_dim=s["xi.gcf.query.weight"][0],
        head_channels=s["xi.head.clg.weight"][0],
        proj_reduction=8 * c // s["tau.proj.fc1.weight"][0] if "tau.proj.fc1.weight" in s else 4,
        image_size=image_size,
        context_scale=context_scale,
    )


# building blocks -----------------------------------------------------------------
def _cln(x: Tensor, p: dict, conv: str, norm: str, eps: float, *, depthwise=False, padding=0) -> Tensor:
    if depthwise:
        y = F.depthwise_conv2d(x, p[f"{conv}.weight"], p[f"{conv}.bias"])
    else:
        y = F.conv2d(x, p[f"{conv}.weight"], p[f"{conv}.bias"], padding=padding)
    return F.layer_norm_channels(y, p[f"{norm}.gamma"], p[f"{norm}.beta"], eps)


def lgemixer_forward(x: Tensor, p: dict[str, Tensor], stage: int, cfg: ModelConfig) -> Tensor:
    """One encoder stage: local 3x3 mixer, residual depthwise far mixer, 1x1 channel mixer, 2x2 max-pool."""
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"lgemixer stage {stage}: spatial dims must be even, got {h}x{w}")
    s, eps = f"stage{stage}", cfg.ln_eps
    x1 = F.gelu(_cln(x, p, f"{s}.local", f"{s}.local_norm", eps, padding=cfg.local_kernel // 2))
    x2 = F.gelu(_cln(x1, p, f"{s}.far", f"{s}.far_norm", eps, depthwise=True)) + x1
    x3 = F.gelu(_cln(x2 + x, p, f"{s}.mix", f"{s}.mix_norm", eps))
    return F.maxpool2x2(x3)


def feature_extractor_forward(image: Tensor, p: dict[str, Tensor], cfg: ModelConfig) -> tuple[Tensor, list[Tensor]]:
    h, w = image.shape[2:]
    if h % 16 or w % 16:
        raise ShapeError(f"feature extractor: input spatial dims must be multiples of 16, got {h}x{w}")
    skips = []
    x = image
    for i in range(N_STAGES):
        x = lgemixer_forward(x, p, i, cfg)
        skips.append(x)
    return x, skips


def bottleneck_forward(f: Tensor, p: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Residual block: GELU(LN(conv(GELU(LN(conv(f))))) + f)."""
    eps = cfg.ln_eps
    t = F.gelu(_cln(f, p, "bottleneck.conv1", "bottleneck.norm1", eps, padding=1))
    t = _cln(t, p, "bottleneck.conv2", "bottleneck.norm2", eps, padding=1)
    return F.gelu(t + f)


def gcf_attention(skips: list[Tensor], f_b: Tensor, p: dict[str, Tensor], cfg: ModelConfig) -> tuple[Tensor, list[Tensor], Tensor]:
    """Return (attention weights [B, 4], per-stage values at context resolution, query)."""
    size = skips[0].shape[2] * 2 // cfg.context_scale, skips[0].shape[3] * 2 // cfg.context_scale
    values, keys = [], []
    for i, s in enumerate(skips):
        v = F.conv2d(s, p[f"gcf.value{i}.weight"], p[f"gcf.value{i}.bias"])
        keys.append(F.global_avg_pool(v))
        values.append(F.resize_bilinear(v, *size))
    q = F.global_avg_pool(F.conv2d(f_b, p["gcf.query.weight"], p["gcf.query.bias"]))
    k = stack(keys, axis=1)  # [B, 4, d]
    b, n, d = k.shape
    scores = tsum(k * q.reshape(b, 1, d), axis=2) * (1.0 / math.sqrt(d))
    return F.softmax(scores), values, q


def gcf_forward(skips: list[Tensor], f_b: Tensor, p: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Context map: softmax(stage scores)-weighted sum of the stage value maps."""
    alpha, values, _ = gcf_attention(skips, f_b, p, cfg)
    v = stack(values, axis=1)  # [B, 4, d, h, w]
    b, n = alpha.shape
    return tsum(v * alpha.reshape(b, n, 1, 1, 1), axis=1)


def head_prediction_forward(context: Tensor, f_b: Tensor, p: dict[str, Tensor], out_h: int, out_w: int, cfg: ModelConfig) -> Tensor:
    """Concat(context, upsampled bottleneck) -> CLG -> 1x1 -> bilinear upsample. Returns logits."""
    up = F.upsample_bilinear(f_b, *context.shape[2:])
    x = concat([context, up], axis=1)
    x = F.gelu(_cln(x, p, "head.clg", "head.norm", cfg.ln_eps, padding=1))
    x = F.conv2d(x, p["head.out.weight"], p["head.out.bias"])
    return F.upsample_bilinear(x, out_h, out_w)


def projector_t(f_t: Tensor) -> Tensor:
    return F.global_avg_pool(f_t) + F.global_max_pool(f_t)


def projector_s(f_m: Tensor, tau: dict[str, Tensor]) -> Tensor:
    v = F.global_avg_pool(f_m) + F.global_max_pool(f_m)
    h = F.gelu(F.linear(v, tau["proj.fc1.weight"], tau["proj.fc1.bias"]))
    return F.linear(h, tau["proj.fc2.weight"], tau["proj.fc2.bias"])


def decode(f_m: Tensor, skips: list[Tensor], xi: dict[str, Tensor], out_h: int, out_w: int, cfg: ModelConfig) -> Tensor:
    f_b = bottleneck_forward(f_m, xi, cfg)
    ctx = gcf_forward(skips, f_b, xi, cfg)
    return head_prediction_forward(ctx, f_b, xi, out_h, out_w, cfg)


def model_forward_train(i_s: Tensor, i_w: Tensor | None, params: ModelParams, serp: bool = True):
    """Training graph. Returns (logits, e_m, e_t); embeddings are None when ``serp`` is off.

    The target branch runs without recording, so no gradient ever reaches phi.
    """
    cfg = params.cfg
    if serp and i_w is not None and i_s.shape != i_w.shape:
        raise ShapeError(f"strong and weak views differ in shape: {i_s.shape} vs {i_w.shape}")
    f_m, skips = feature_extractor_forward(i_s, params.theta, cfg)
    logits = decode(f_m, skips, params.xi, i_s.shape[2], i_s.shape[3], cfg)
    if not serp:
        return logits, None, None
    e_m = projector_s(f_m, params.tau)
    with no_grad():
        f_t, _ = feature_extractor_forward(i_w, params.phi, cfg)
        e_t = projector_t(f_t)
    return logits, e_m, e_t


def model_forward_infer(image: Tensor, params: ModelParams) -> Tensor:
    """Inference graph (theta and xi only); returns probabilities."""
    cfg = params.cfg
    with no_grad():
        f_m, skips = feature_extractor_forward(image, params.theta, cfg)
        logits = decode(f_m, skips, params.xi, image.shape[2], image.shape[3], cfg)
        return F.sigmoid(logits)


def param_count(params: ModelParams, scope: str = "infer") -> int:
    if scope == "infer":
        groups = ("theta", "xi")
    elif scope == "train":
        groups = GROUPS
    else:
        raise ValueError(f"scope must be 'infer' or 'train', got {scope!r}")
    return sum(t.size for t in params.named(groups).values())


def config_param_count(cfg: ModelConfig, scope: str = "infer") -> int:
    """Parameter count from the layer shapes alone, without allocating tensors."""
    shapes = _param_shapes(cfg)
    n = {g: sum(int(np.prod(s)) for s in shapes[g].values()) for g in shapes}
    if scope == "infer":
        return n["theta"] + n["xi"]
    return 2 * n["theta"] + n["xi"] + n["tau"]


def with_image_size(cfg: ModelConfig, size: int) -> ModelConfig:
    return replace(cfg, image_size=size)
