"""Parametric time-dependent vector field over frame sequences.

A small pre-norm attention network regresses the transport velocity from
the noisy state, the visible context, and the frame-aligned condition
streams.  Forward, backward, and the optimizer are written directly in
numpy so every gradient can be checked against finite differences; all
math runs in double precision.

Input fusion: [x_t; context; phoneme-embedding; nv; emo] are concatenated
per frame, projected to the model width, and a sinusoidal embedding of
the path time t is added (plus an optional sinusoidal positional code).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import erf

from .fm_core import FlowSample
from .infill import ConditionBundle, NV_DIM, EMO_DIM
from .features import FormatError

CHECKPOINT_MAGIC = b"FMCK"
CHECKPOINT_VERSION = 1

_LN_EPS = 1e-6
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 64
    d_ffn: int = 128
    d_phn: int = 8
    d_nv: int = NV_DIM
    d_emo: int = EMO_DIM
    n_phonemes: int = 16
    feature_dim: int = 8
    frames_per_second: float = 100.0
    use_positional: bool = True

    def __post_init__(self):
        counts = {
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_model": self.d_model,
            "d_ffn": self.d_ffn,
            "d_phn": self.d_phn,
            "n_phonemes": self.n_phonemes,
            "feature_dim": self.feature_dim,
        }
        for name, value in counts.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.d_nv != NV_DIM:
            raise ValueError(f"d_nv must be {NV_DIM}, got {self.d_nv}")
        if self.d_emo != EMO_DIM:
            raise ValueError(f"d_emo must be {EMO_DIM}, got {self.d_emo}")

    @property
    def input_dim(self) -> int:
        return 2 * self.feature_dim + self.d_phn + self.d_nv + self.d_emo


# Desk scale trains on a laptop CPU in minutes; fullscale mirrors a
# production-size stack and is not runnable at desk.
PRESETS: dict[str, ModelConfig] = {
    "desk": ModelConfig(),
    "fullscale": ModelConfig(
        n_layers=24,
        n_heads=16,
        d_model=1024,
        d_ffn=4096,
        d_phn=128,
        n_phonemes=256,
        feature_dim=80,
    ),
}


def param_names(cfg: ModelConfig) -> list[str]:
    """Canonical parameter order, also the checkpoint serialization order."""
    names = ["phn_emb", "in_w", "in_b"]
    for i in range(cfg.n_layers):
        p = f"block{i}."
        names += [p + "ln1_g", p + "ln1_b"]
        names += [p + n for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]
        names += [p + "ln2_g", p + "ln2_b"]
        names += [p + n for n in ("ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2")]
    names += ["out_ln_g", "out_ln_b", "out_w", "out_b"]
    return names


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ffn
    shapes: dict[str, tuple[int, ...]] = {
        "phn_emb": (cfg.n_phonemes, cfg.d_phn),
        "in_w": (cfg.input_dim, d),
        "in_b": (d,),
    }
    for i in range(cfg.n_layers):
        p = f"block{i}."
        shapes[p + "ln1_g"] = (d,)
        shapes[p + "ln1_b"] = (d,)
        for n in ("wq", "wk", "wv", "wo"):
            shapes[p + n] = (d, d)
        for n in ("bq", "bk", "bv", "bo"):
            shapes[p + n] = (d,)
        shapes[p + "ln2_g"] = (d,)
        shapes[p + "ln2_b"] = (d,)
        shapes[p + "ffn_w1"] = (d, f)
        shapes[p + "ffn_b1"] = (f,)
        shapes[p + "ffn_w2"] = (f, d)
        shapes[p + "ffn_b2"] = (d,)
    shapes["out_ln_g"] = (d,)
    shapes["out_ln_b"] = (d,)
    shapes["out_w"] = (d, cfg.feature_dim)
    shapes["out_b"] = (cfg.feature_dim,)
    return shapes


def init_params(
    cfg: ModelConfig, rng: np.random.Generator, *, zero_output: bool = True
) -> dict[str, np.ndarray]:
    """Initialize all tensors.

    Weights are scaled-normal, norms/biases are identity/zero, and the
    output projection starts at zero by default so the untrained field
    is the zero field.  Draws are made in float32 and held in float64,
    which keeps fresh parameters exactly representable in the 32-bit
    checkpoint format.
    """
    params: dict[str, np.ndarray] = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith("_g"):
            params[name] = np.ones(shape)  # layernorm gains
        elif len(shape) == 1:
            params[name] = np.zeros(shape)  # every bias / layernorm offset
        elif name == "out_w" and zero_output:
            params[name] = np.zeros(shape)
        else:
            scale = 1.0 / np.sqrt(shape[0])
            draw = rng.standard_normal(shape).astype(np.float32) * np.float32(scale)
            params[name] = draw.astype(np.float64)
    return {name: params[name] for name in param_names(cfg)}


def embed_phonemes(tokens: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Look up token ids in the embedding table; returns d_phn x T."""
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= table.shape[0]):
        raise IndexError(
            f"phoneme id out of vocabulary (size {table.shape[0]}): "
            f"range [{tokens.min()}, {tokens.max()}]"
        )
    return table[tokens].T


def time_embedding(t: np.ndarray, d_model: int) -> np.ndarray:
    """Sinusoidal embedding of path time, one row per batch element."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = d_model // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = 1000.0 * t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if emb.shape[1] < d_model:  # odd width: pad the leftover column
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


def positional_encoding(T: int, d_model: int) -> np.ndarray:
    """Standard sinusoidal position code, (T, d_model)."""
    pos = np.arange(T, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    ang = pos / np.power(10000.0, (2.0 * (i // 2)) / d_model)
    pe = np.empty((T, d_model))
    pe[:, 0::2] = np.sin(ang[:, 0::2])
    pe[:, 1::2] = np.cos(ang[:, 1::2])
    return pe


def _linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(B,T,i) @ (i,o) + (o,) as one flat GEMM."""
    bt = x.shape[:-1]
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(*bt, w.shape[1]) + b


def _linear_backward(x: np.ndarray, dy: np.ndarray, w: np.ndarray):
    """Returns (dx, dw, db) for y = x @ w + b."""
    i, o = w.shape
    x2 = x.reshape(-1, i)
    dy2 = dy.reshape(-1, o)
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = (dy2 @ w.T).reshape(x.shape)
    return dx, dw, db


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * istd
    return g * xhat + b, (xhat, istd, g)


def _layernorm_backward(dy, cache):
    xhat, istd, g = cache
    dxhat = dy * g
    dg = (dy * xhat).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1))
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = istd * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


@dataclass
class BatchInputs:
    """Stacked per-example arrays; every example must share F and T."""

    x_t: np.ndarray  # (B, F, T)
    t: np.ndarray  # (B,)
    tokens: np.ndarray  # (B, T)
    nv: np.ndarray  # (B, 32, T)
    emo: np.ndarray  # (B, 2, T)
    context: np.ndarray  # (B, F, T)
    mask_bits: np.ndarray  # (B, T)

    @classmethod
    def from_examples(
        cls, x_t: Sequence[np.ndarray], t: Sequence[float], conds: Sequence[ConditionBundle]
    ) -> "BatchInputs":
        shapes = {np.shape(x) for x in x_t}
        if len(shapes) != 1:
            raise ValueError(f"batch examples disagree in shape: {shapes}")
        t_len = shapes.pop()[1]
        bad = {c.length for c in conds if c.length != t_len}
        if bad:
            raise ValueError(f"condition length(s) {sorted(bad)} != state length {t_len}")
        return cls(
            x_t=np.stack([np.asarray(x, dtype=np.float64) for x in x_t]),
            t=np.asarray(t, dtype=np.float64),
            tokens=np.stack([c.phonemes for c in conds]),
            nv=np.stack([np.asarray(c.nv, dtype=np.float64) for c in conds]),
            emo=np.stack([np.asarray(c.emo, dtype=np.float64) for c in conds]),
            context=np.stack([np.asarray(c.context, dtype=np.float64) for c in conds]),
            mask_bits=np.stack([c.mask.bits for c in conds]).astype(np.float64),
        )


class VectorFieldModel:
    """The learned velocity field v(x_t, t, conditions)."""

    def __init__(self, config: ModelConfig):
        self.config = config

    def init_params(self, rng, *, zero_output: bool = True):
        return init_params(self.config, rng, zero_output=zero_output)

    # -- forward -----------------------------------------------------------

    def forward_batch(self, inputs: BatchInputs, params, *, want_cache: bool = False):
        cfg = self.config
        x_t = inputs.x_t
        b, f, t_len = x_t.shape
        if f != cfg.feature_dim:
            raise ValueError(f"feature dim {f} != configured {cfg.feature_dim}")
        for arr in (inputs.x_t, inputs.nv, inputs.emo, inputs.context):
            if not np.isfinite(arr).all():
                raise FloatingPointError("non-finite value in model input")

        emb = embed_phonemes(inputs.tokens.reshape(-1), params["phn_emb"])
        emb = emb.T.reshape(b, t_len, cfg.d_phn)
        u = np.concatenate(
            [
                x_t.transpose(0, 2, 1),
                inputs.context.transpose(0, 2, 1),
                emb,
                inputs.nv.transpose(0, 2, 1),
                inputs.emo.transpose(0, 2, 1),
            ],
            axis=2,
        )
        z = _linear(u, params["in_w"], params["in_b"])
        z = z + time_embedding(inputs.t, cfg.d_model)[:, None, :]
        if cfg.use_positional:
            z = z + positional_encoding(t_len, cfg.d_model)[None, :, :]

        blocks = []
        scale = 1.0 / np.sqrt(cfg.d_model // cfg.n_heads)
        for i in range(cfg.n_layers):
            p = f"block{i}."
            y1, ln1c = _layernorm(z, params[p + "ln1_g"], params[p + "ln1_b"])
            q = _split_heads(_linear(y1, params[p + "wq"], params[p + "bq"]), cfg.n_heads)
            k = _split_heads(_linear(y1, params[p + "wk"], params[p + "bk"]), cfg.n_heads)
            v = _split_heads(_linear(y1, params[p + "wv"], params[p + "bv"]), cfg.n_heads)
            s = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale
            s = s - s.max(axis=-1, keepdims=True)
            e = np.exp(s)
            attn_p = e / e.sum(axis=-1, keepdims=True)
            o_heads = np.matmul(attn_p, v)
            o = _merge_heads(o_heads)
            attn_out = _linear(o, params[p + "wo"], params[p + "bo"])
            z_attn = z + attn_out

            y2, ln2c = _layernorm(z_attn, params[p + "ln2_g"], params[p + "ln2_b"])
            h1 = _linear(y2, params[p + "ffn_w1"], params[p + "ffn_b1"])
            a1 = _gelu(h1)
            ffn_out = _linear(a1, params[p + "ffn_w2"], params[p + "ffn_b2"])
            z_next = z_attn + ffn_out

            blocks.append(
                {"y1": y1, "ln1c": ln1c, "q": q, "k": k, "v": v, "p": attn_p,
                 "o": o, "y2": y2, "ln2c": ln2c, "h1": h1, "a1": a1}
            )
            z = z_next

        g_out, lnfc = _layernorm(z, params["out_ln_g"], params["out_ln_b"])
        v_out = _linear(g_out, params["out_w"], params["out_b"])
        out = v_out.transpose(0, 2, 1)
        if not want_cache:
            return out, None
        cache = {"u": u, "tokens": inputs.tokens, "blocks": blocks,
                 "g_out": g_out, "lnfc": lnfc, "scale": scale}
        return out, cache

    def forward(
        self, x_t: np.ndarray, t: float, cond: ConditionBundle, params
    ) -> np.ndarray:
        """Single-example forward; output shape matches x_t."""
        inputs = BatchInputs.from_examples([x_t], [t], [cond])
        out, _ = self.forward_batch(inputs, params)
        return out[0]

    # -- backward ----------------------------------------------------------

    def backward_batch(self, grad_out: np.ndarray, cache, params):
        """Gradients of a scalar loss w.r.t. every parameter tensor.

        ``grad_out`` is dLoss/dOutput with output shape (B, F, T);
        ``cache`` comes from forward_batch(want_cache=True).
        """
        if cache is None:
            raise RuntimeError("backward requires a cache from forward_batch(want_cache=True)")
        cfg = self.config
        grads = {name: np.zeros_like(params[name]) for name in params}

        dv = grad_out.transpose(0, 2, 1)
        dg_out, grads["out_w"], grads["out_b"] = _linear_backward(
            cache["g_out"], dv, params["out_w"]
        )
        dz, grads["out_ln_g"], grads["out_ln_b"] = _layernorm_backward(
            dg_out, cache["lnfc"]
        )

        scale = cache["scale"]
        for i in reversed(range(cfg.n_layers)):
            p = f"block{i}."
            blk = cache["blocks"][i]

            # FFN sub-block: z_next = z_attn + ffn(ln2(z_attn))
            d_ffn_out = dz
            da1, grads[p + "ffn_w2"], grads[p + "ffn_b2"] = _linear_backward(
                blk["a1"], d_ffn_out, params[p + "ffn_w2"]
            )
            dh1 = da1 * _gelu_grad(blk["h1"])
            dy2, grads[p + "ffn_w1"], grads[p + "ffn_b1"] = _linear_backward(
                blk["y2"], dh1, params[p + "ffn_w1"]
            )
            dz_attn, grads[p + "ln2_g"], grads[p + "ln2_b"] = _layernorm_backward(
                dy2, blk["ln2c"]
            )
            dz_attn = dz_attn + dz  # residual branch

            # attention sub-block: z_attn = z + attn(ln1(z))
            d_attn_out = dz_attn
            do, grads[p + "wo"], grads[p + "bo"] = _linear_backward(
                blk["o"], d_attn_out, params[p + "wo"]
            )
            do_heads = _split_heads(do, cfg.n_heads)
            dp = np.matmul(do_heads, blk["v"].transpose(0, 1, 3, 2))
            dv_heads = np.matmul(blk["p"].transpose(0, 1, 3, 2), do_heads)
            ds = blk["p"] * (dp - (dp * blk["p"]).sum(axis=-1, keepdims=True))
            dq = np.matmul(ds, blk["k"]) * scale
            dk = np.matmul(ds.transpose(0, 1, 3, 2), blk["q"]) * scale
            dq_m, dk_m, dv_m = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv_heads)
            y1 = blk["y1"]
            dy1_q, grads[p + "wq"], grads[p + "bq"] = _linear_backward(y1, dq_m, params[p + "wq"])
            dy1_k, grads[p + "wk"], grads[p + "bk"] = _linear_backward(y1, dk_m, params[p + "wk"])
            dy1_v, grads[p + "wv"], grads[p + "bv"] = _linear_backward(y1, dv_m, params[p + "wv"])
            dy1 = dy1_q + dy1_k + dy1_v
            dz_pre, grads[p + "ln1_g"], grads[p + "ln1_b"] = _layernorm_backward(
                dy1, blk["ln1c"]
            )
            dz = dz_pre + dz_attn  # residual branch

        # input projection and phoneme embedding
        du, grads["in_w"], grads["in_b"] = _linear_backward(cache["u"], dz, params["in_w"])
        f = cfg.feature_dim
        demb = du[:, :, 2 * f : 2 * f + cfg.d_phn]
        np.add.at(
            grads["phn_emb"],
            cache["tokens"].reshape(-1),
            demb.reshape(-1, cfg.d_phn),
        )
        return grads


# -- loss, optimizer, training step --------------------------------------


class TrainingDivergedError(RuntimeError):
    """Raised when the batch loss becomes non-finite."""


def masked_batch_loss_grad(
    v_pred: np.ndarray, u_target: np.ndarray, mask_bits: np.ndarray | None
) -> tuple[float, np.ndarray]:
    """MSE over scored elements and its gradient w.r.t. v_pred.

    ``mask_bits`` (B, T) restricts scoring to masked frames; None scores
    everything.
    """
    diff = v_pred - u_target
    if mask_bits is None:
        count = diff.size
        loss = float(np.sum(diff * diff) / count)
        return loss, 2.0 * diff / count
    sel = mask_bits[:, None, :]
    count = float(sel.sum() * v_pred.shape[1])
    if count == 0:
        raise ValueError("batch mask selects no frames")
    loss = float(np.sum(diff * diff * sel) / count)
    return loss, 2.0 * diff * sel / count


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to the peak rate, then linear decay to zero."""

    peak: float
    warmup_steps: int
    total_steps: int

    def at(self, step: int) -> float:
        if step < 1:
            raise ValueError(f"step must be >= 1, got {step}")
        if self.warmup_steps > 0 and step <= self.warmup_steps:
            return self.peak * step / self.warmup_steps
        if self.total_steps <= self.warmup_steps:
            return self.peak
        frac = (self.total_steps - step) / (self.total_steps - self.warmup_steps)
        return self.peak * max(frac, 0.0)


@dataclass
class OptimizerState:
    """Adam moments plus the step counter driving the schedule."""

    schedule: LrSchedule
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params, grads, state: OptimizerState) -> float:
    """Apply one Adam step in place; returns the learning rate used."""
    state.step += 1
    lr = state.schedule.at(state.step)
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        mhat = state.m[name] / bc1
        vhat = state.v[name] / bc2
        params[name] -= lr * mhat / (np.sqrt(vhat) + state.eps)
    return lr


def train_step(
    model: VectorFieldModel,
    batch: Sequence[tuple[FlowSample, ConditionBundle]],
    params,
    opt_state: OptimizerState,
    *,
    mask_loss: bool = True,
) -> tuple[dict, float, float]:
    """One optimizer update on a batch of (flow sample, conditions) pairs.

    Returns (params, pre-update batch loss, learning rate applied).  The
    loss is restricted to masked frames unless ``mask_loss`` is False.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    samples = [s for s, _ in batch]
    conds = [c for _, c in batch]
    inputs = BatchInputs.from_examples(
        [s.x_t for s in samples], [s.t for s in samples], conds
    )
    u_target = np.stack([s.u_target for s in samples])

    v_pred, cache = model.forward_batch(inputs, params, want_cache=True)
    loss, dv = masked_batch_loss_grad(
        v_pred, u_target, inputs.mask_bits if mask_loss else None
    )
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss at optimizer step {opt_state.step + 1}"
        )
    grads = model.backward_batch(dv, cache, params)
    lr = adam_update(params, grads, opt_state)
    return params, loss, lr


def make_field_fn(model: VectorFieldModel, params):
    """Adapt the model to the sampler's field interface.

    Returns a callable (x (B,F,T), t, condition bundles) -> velocities.
    """

    def field(x: np.ndarray, t: float, conds) -> np.ndarray:
        inputs = BatchInputs.from_examples(
            list(x), [t] * x.shape[0], list(conds)
        )
        out, _ = model.forward_batch(inputs, params)
        return out

    return field


# -- checkpoint I/O -------------------------------------------------------


def save_checkpoint(path: str | Path, cfg: ModelConfig, params) -> None:
    """Write config and tensors: magic, version, JSON config block, then
    length-prefixed named tensors as little-endian float32."""
    names = param_names(cfg)
    cfg_json = json.dumps(asdict(cfg), sort_keys=True).encode()
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<I", len(cfg_json)),
        cfg_json,
        struct.pack("<I", len(names)),
    ]
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    """Read a checkpoint back; tensors are returned as float64 arrays."""
    blob = Path(path).read_bytes()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"truncated checkpoint {path}: while reading {what}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic in {path}: expected {CHECKPOINT_MAGIC!r}")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} in {path}")
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    cfg = ModelConfig(**json.loads(take(cfg_len, "config block")))
    (n_tensors,) = struct.unpack("<I", take(4, "tensor count"))

    params: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<I", take(4, "tensor name length"))
        name = take(name_len, "tensor name").decode()
        (ndim,) = struct.unpack("<I", take(4, "tensor rank"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "tensor shape"))
        n_elem = int(np.prod(shape)) if ndim else 1
        raw = take(4 * n_elem, f"tensor {name} payload")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        if not np.isfinite(arr).all():
            raise FormatError(f"non-finite values in tensor {name} of {path}")
        params[name] = arr
    if off != len(blob):
        raise FormatError(f"trailing bytes after tensors in {path}")

    expected = set(param_names(cfg))
    if set(params) != expected:
        missing = expected - set(params)
        extra = set(params) - expected
        raise FormatError(
            f"checkpoint {path} tensor names mismatch config: "
            f"missing={sorted(missing)} extra={sorted(extra)}"
        )
    return cfg, params
