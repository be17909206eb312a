"""Trainable audio adapter: layer mix, Q-former, projection.

The only trainable component.  A softmax over layer logits mixes the
encoder's depth axis, K learnable queries cross-attend over the mixed
frames in B pre-norm blocks (each block attends the frames afresh), and
an affine projection maps the K summaries into the LM embedding space.
Without frame positions (the default) the Q-former is pure set attention:
permuting or duplicating frames leaves the prefix unchanged, which is the
right bias for presence/absence questions.  Backward passes are written
out by hand and validated against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import LayerStack
from .errors import DataError
from .nn import gelu, gelu_backward, layer_norm, layer_norm_backward, softmax, softmax_backward
from .rng import Stream

ADAPTER_VERSION = "adapter-v1"

# documented initialization scales
WEIGHT_INIT_SCALE = 0.05
QUERY_INIT_SCALE = 0.1


@dataclass(frozen=True)
class AdapterConfig:
    d_enc: int = 32
    n_layers: int = 4  # encoder depths L
    d_q: int = 32
    n_queries: int = 8  # K
    n_blocks: int = 2  # B
    d_llm: int = 64
    d_ff: int = 128
    use_frame_positions: bool = False

    def to_json(self) -> dict:
        return {
            "d_enc": self.d_enc,
            "n_layers": self.n_layers,
            "d_q": self.d_q,
            "n_queries": self.n_queries,
            "n_blocks": self.n_blocks,
            "d_llm": self.d_llm,
            "d_ff": self.d_ff,
            "use_frame_positions": self.use_frame_positions,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "AdapterConfig":
        return cls(**payload)


@dataclass
class AdapterParams:
    arrays: dict[str, np.ndarray]
    config: AdapterConfig
    version: str = ADAPTER_VERSION

    @property
    def layer_logits(self) -> np.ndarray:
        return self.arrays["adapter.layer_logits"]


@dataclass(frozen=True)
class AudioPrefix:
    """K rows in LM embedding space, independent of clip duration."""

    vectors: np.ndarray  # [K x d_llm]

    @property
    def k(self) -> int:
        return self.vectors.shape[0]


def init_adapter(config: AdapterConfig | None = None, seed: int = 0) -> AdapterParams:
    """Fresh adapter: zero layer logits (uniform mix), scaled-normal weights."""
    config = config or AdapterConfig()
    rng = Stream(seed).derive("adapter", ADAPTER_VERSION)
    dq, de, dff = config.d_q, config.d_enc, config.d_ff
    arrays: dict[str, np.ndarray] = {
        "adapter.layer_logits": np.zeros(config.n_layers),
        "adapter.queries": rng.derive("queries").normal((config.n_queries, dq), scale=QUERY_INIT_SCALE),
        "adapter.proj.w": rng.derive("proj").normal((dq, config.d_llm), scale=WEIGHT_INIT_SCALE),
        "adapter.proj.b": np.zeros(config.d_llm),
    }
    for i in range(config.n_blocks):
        p = f"adapter.block{i}."
        arrays[p + "norm_q.g"] = np.ones(dq)
        arrays[p + "norm_q.b"] = np.zeros(dq)
        arrays[p + "norm_kv.g"] = np.ones(de)
        arrays[p + "norm_kv.b"] = np.zeros(de)
        arrays[p + "q.w"] = rng.derive(i, "q").normal((dq, dq), scale=WEIGHT_INIT_SCALE)
        arrays[p + "q.b"] = np.zeros(dq)
        arrays[p + "k.w"] = rng.derive(i, "k").normal((de, dq), scale=WEIGHT_INIT_SCALE)
        arrays[p + "k.b"] = np.zeros(dq)
        arrays[p + "v.w"] = rng.derive(i, "v").normal((de, dq), scale=WEIGHT_INIT_SCALE)
        arrays[p + "v.b"] = np.zeros(dq)
        arrays[p + "out.w"] = rng.derive(i, "out").normal((dq, dq), scale=WEIGHT_INIT_SCALE)
        arrays[p + "out.b"] = np.zeros(dq)
        arrays[p + "norm_ff.g"] = np.ones(dq)
        arrays[p + "norm_ff.b"] = np.zeros(dq)
        arrays[p + "ff1.w"] = rng.derive(i, "ff1").normal((dq, dff), scale=WEIGHT_INIT_SCALE)
        arrays[p + "ff1.b"] = np.zeros(dff)
        arrays[p + "ff2.w"] = rng.derive(i, "ff2").normal((dff, dq), scale=WEIGHT_INIT_SCALE)
        arrays[p + "ff2.b"] = np.zeros(dq)
    return AdapterParams(arrays=arrays, config=config)


def mix_weights(layer_logits: np.ndarray) -> np.ndarray:
    """Softmax over encoder depths; strictly positive, sums to 1."""
    return softmax(layer_logits)


def layer_mix(stack: LayerStack, layer_logits: np.ndarray) -> np.ndarray:
    """Weighted sum across the layer axis: [T x L x d_enc] -> [T x d_enc]."""
    if stack.layer_count != layer_logits.shape[0]:
        raise ValueError(
            f"stack has {stack.layer_count} layers but logits have {layer_logits.shape[0]}"
        )
    w = mix_weights(layer_logits)
    return np.einsum("tld,l->td", stack.features, w)


def frame_positions(n_frames: int, d: int) -> np.ndarray:
    """Sinusoidal frame positions, interleaved sin/cos pairs."""
    pos = np.arange(n_frames)[:, None]
    i = np.arange(d // 2)[None, :]
    angles = pos / (10000.0 ** (2 * i / d))
    enc = np.zeros((n_frames, d))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


def _forward_cached(stack: LayerStack, params: AdapterParams) -> tuple[np.ndarray, dict]:
    cfg = params.config
    a = params.arrays
    feats = stack.features
    if feats.shape[0] < 1:
        raise DataError("layer stack has no frames")
    w = mix_weights(a["adapter.layer_logits"])
    mixed = np.einsum("tld,l->td", feats, w)
    if cfg.use_frame_positions:
        mixed = mixed + frame_positions(mixed.shape[0], cfg.d_enc)
    cache: dict = {"feats": feats, "w": w, "mixed": mixed, "blocks": []}
    scale = 1.0 / np.sqrt(cfg.d_q)
    q = a["adapter.queries"]
    for i in range(cfg.n_blocks):
        p = f"adapter.block{i}."
        bc: dict = {"q_in": q, "p": p}
        qn, bc["ln_q"] = layer_norm(q, a[p + "norm_q.g"], a[p + "norm_q.b"])
        fn, bc["ln_kv"] = layer_norm(mixed, a[p + "norm_kv.g"], a[p + "norm_kv.b"])
        bc["qn"], bc["fn"] = qn, fn
        qp = qn @ a[p + "q.w"] + a[p + "q.b"]
        kp = fn @ a[p + "k.w"] + a[p + "k.b"]
        vp = fn @ a[p + "v.w"] + a[p + "v.b"]
        att = softmax(qp @ kp.T * scale)  # [K x T], rows sum to 1
        ctx = att @ vp
        bc.update(qp=qp, kp=kp, vp=vp, att=att, ctx=ctx)
        q1 = q + ctx @ a[p + "out.w"] + a[p + "out.b"]
        bc["q1"] = q1
        hf, bc["ln_ff"] = layer_norm(q1, a[p + "norm_ff.g"], a[p + "norm_ff.b"])
        a1 = hf @ a[p + "ff1.w"] + a[p + "ff1.b"]
        g = gelu(a1)
        bc.update(hf=hf, a1=a1, g=g)
        q = q1 + g @ a[p + "ff2.w"] + a[p + "ff2.b"]
        cache["blocks"].append(bc)
    cache["q_out"] = q
    prefix = q @ a["adapter.proj.w"] + a["adapter.proj.b"]
    return prefix, cache


def adapter_forward(stack: LayerStack, params: AdapterParams) -> AudioPrefix:
    """stack -> project(qformer(layer_mix(stack))): [K x d_llm]."""
    prefix, _ = _forward_cached(stack, params)
    return AudioPrefix(vectors=prefix)


def adapter_forward_cached(stack: LayerStack, params: AdapterParams) -> tuple[AudioPrefix, dict]:
    prefix, cache = _forward_cached(stack, params)
    return AudioPrefix(vectors=prefix), cache


def adapter_backward(params: AdapterParams, cache: dict, d_prefix: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every adapter array given d(loss)/d(prefix rows)."""
    cfg = params.config
    a = params.arrays
    scale = 1.0 / np.sqrt(cfg.d_q)
    grads: dict[str, np.ndarray] = {}

    q_out = cache["q_out"]
    grads["adapter.proj.w"] = q_out.T @ d_prefix
    grads["adapter.proj.b"] = d_prefix.sum(axis=0)
    dq = d_prefix @ a["adapter.proj.w"].T
    dmixed = np.zeros_like(cache["mixed"])

    for bc in reversed(cache["blocks"]):
        p = bc["p"]
        # feed-forward branch
        dff_out = dq
        grads[p + "ff2.w"] = bc["g"].T @ dff_out
        grads[p + "ff2.b"] = dff_out.sum(axis=0)
        dg = dff_out @ a[p + "ff2.w"].T
        da1 = gelu_backward(dg, bc["a1"])
        grads[p + "ff1.w"] = bc["hf"].T @ da1
        grads[p + "ff1.b"] = da1.sum(axis=0)
        dhf = da1 @ a[p + "ff1.w"].T
        dq1_n, grads[p + "norm_ff.g"], grads[p + "norm_ff.b"] = layer_norm_backward(dhf, bc["ln_ff"])
        dq1 = dq + dq1_n
        # attention branch
        dattn_out = dq1
        grads[p + "out.w"] = bc["ctx"].T @ dattn_out
        grads[p + "out.b"] = dattn_out.sum(axis=0)
        dctx = dattn_out @ a[p + "out.w"].T
        datt = dctx @ bc["vp"].T
        dvp = bc["att"].T @ dctx
        dscores = softmax_backward(datt, bc["att"])
        dqp = dscores @ bc["kp"] * scale
        dkp = dscores.T @ bc["qp"] * scale
        grads[p + "q.w"] = bc["qn"].T @ dqp
        grads[p + "q.b"] = dqp.sum(axis=0)
        grads[p + "k.w"] = bc["fn"].T @ dkp
        grads[p + "k.b"] = dkp.sum(axis=0)
        grads[p + "v.w"] = bc["fn"].T @ dvp
        grads[p + "v.b"] = dvp.sum(axis=0)
        dqn = dqp @ a[p + "q.w"].T
        dfn = dkp @ a[p + "k.w"].T + dvp @ a[p + "v.w"].T
        dq_in_n, grads[p + "norm_q.g"], grads[p + "norm_q.b"] = layer_norm_backward(dqn, bc["ln_q"])
        dmix_n, grads[p + "norm_kv.g"], grads[p + "norm_kv.b"] = layer_norm_backward(dfn, bc["ln_kv"])
        dmixed += dmix_n
        dq = dq1 + dq_in_n

    grads["adapter.queries"] = dq
    # through the layer mix: mixed[t] = sum_l w[l] * feats[t, l]
    dw = np.einsum("td,tld->l", dmixed, cache["feats"])
    grads["adapter.layer_logits"] = softmax_backward(dw, cache["w"])
    return grads


def qformer_forward(mixed: np.ndarray, params: AdapterParams) -> np.ndarray:
    """Cross-attention summary of [T x d_enc] frames into [K x d_q]."""
    if mixed.ndim != 2 or mixed.shape[0] < 1:
        raise DataError(f"expected [T>=1 x d_enc] frames, got shape {mixed.shape}")
    stack = LayerStack(features=mixed[:, None, :])
    # reuse the cached forward with a single pseudo-layer and logits fixed
    # to a point mass; simpler than duplicating the block loop
    cfg = params.config
    a_sub = dict(params.arrays)
    a_sub["adapter.layer_logits"] = np.zeros(1)
    sub = AdapterParams(
        arrays=a_sub,
        config=AdapterConfig(
            d_enc=cfg.d_enc,
            n_layers=1,
            d_q=cfg.d_q,
            n_queries=cfg.n_queries,
            n_blocks=cfg.n_blocks,
            d_llm=cfg.d_llm,
            d_ff=cfg.d_ff,
            use_frame_positions=cfg.use_frame_positions,
        ),
    )
    _, cache = _forward_cached(stack, sub)
    return cache["q_out"]


def project(q_out: np.ndarray, params: AdapterParams) -> AudioPrefix:
    """Affine map into LM embedding space: [K x d_q] -> [K x d_llm]."""
    w, b = params.arrays["adapter.proj.w"], params.arrays["adapter.proj.b"]
    if q_out.shape[1] != w.shape[0]:
        raise ValueError(f"q_out dim {q_out.shape[1]} does not match proj {w.shape}")
    return AudioPrefix(vectors=q_out @ w + b)
