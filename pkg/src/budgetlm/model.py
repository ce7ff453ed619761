"""Transformer encoder for masked-token prediction, in plain numpy.

Post-layer-norm residual blocks, GELU feed-forward, learned positional
embeddings, and an output projection tied to the input embedding. The
prediction head only ever sees the hidden states at masked positions, so
vocabulary logits are computed for those M positions rather than all B*S.

forward/backward are exact: `backward` returns analytic gradients for every
parameter tensor, validated against central finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ConfigError, DataError, DivergenceError
from .pipeline import MaskedInstance
from .util import LANE_DROPOUT, LANE_INIT, rng_stream

# Plain Python floats: numpy's weak scalar promotion keeps float32 arrays
# in float32, where a numpy float64 scalar would silently upcast them.
_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327
_LN_EPS = 1e-12
_NEG_INF = -1e9

# Dropout sites, part of each mask's stream key.
_SITE_EMB = 0
_SITE_ATTN_PROBS = 1
_SITE_ATTN_OUT = 2
_SITE_FFN_OUT = 3

PRESETS: dict[str, dict[str, int]] = {
    "tiny": {"num_layers": 2, "hidden_size": 64, "num_heads": 4, "ffn_size": 256},
    "small": {"num_layers": 4, "hidden_size": 128, "num_heads": 4, "ffn_size": 512},
    "large": {"num_layers": 24, "hidden_size": 1024, "num_heads": 16, "ffn_size": 4096},
}


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    hidden_size: int
    num_heads: int
    ffn_size: int
    vocab_size: int
    seq_len: int
    dropout: float = 0.1
    attention_dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.hidden_size % self.num_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        for name in ("num_layers", "hidden_size", "num_heads", "ffn_size", "vocab_size", "seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (0 <= self.dropout < 1 and 0 <= self.attention_dropout < 1):
            raise ConfigError("dropout rates must be in [0, 1)")

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_heads


def config_from_preset(
    preset: str,
    vocab_size: int,
    seq_len: int,
    dropout: float = 0.1,
    attention_dropout: float = 0.1,
) -> ModelConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(
        vocab_size=vocab_size,
        seq_len=seq_len,
        dropout=dropout,
        attention_dropout=attention_dropout,
        **PRESETS[preset],
    )


@dataclass
class Batch:
    """A group of masked instances laid out for the encoder.

    mask_rows/mask_cols index the flattened (instance, position) list of all
    masked slots in the batch; labels aligns with that list.
    """

    input_ids: np.ndarray  # (B, S) int32
    lengths: np.ndarray  # (B,) int32
    mask_rows: np.ndarray  # (M,) int32
    mask_cols: np.ndarray  # (M,) int32
    labels: np.ndarray  # (M,) int32

    def __post_init__(self) -> None:
        if self.num_masked < 1:
            raise DataError("batch contains no masked positions")
        S = self.input_ids.shape[1]
        if self.mask_cols.min() < 0 or self.mask_cols.max() >= S:
            raise DataError("mask position out of range")
        if self.mask_rows.min() < 0 or self.mask_rows.max() >= self.input_ids.shape[0]:
            raise DataError("mask row out of range")

    @property
    def size(self) -> int:
        return self.input_ids.shape[0]

    @property
    def num_masked(self) -> int:
        return len(self.labels)


def make_batch(instances: list[MaskedInstance]) -> Batch:
    if not instances:
        raise DataError("cannot build an empty batch")
    ids = np.stack([inst.input_ids for inst in instances]).astype(np.int32)
    lengths = np.asarray([inst.true_length for inst in instances], dtype=np.int32)
    rows, cols, labels = [], [], []
    for r, inst in enumerate(instances):
        rows.extend([r] * len(inst.mask_positions))
        cols.extend(int(p) for p in inst.mask_positions)
        labels.extend(int(t) for t in inst.labels)
    return Batch(
        input_ids=ids,
        lengths=lengths,
        mask_rows=np.asarray(rows, dtype=np.int32),
        mask_cols=np.asarray(cols, dtype=np.int32),
        labels=np.asarray(labels, dtype=np.int32),
    )


class DropoutStreams:
    """Dropout mask source keyed by (seed, step, micro-batch, layer, site).

    Because masks are a pure function of those indices, a resumed run or a
    replayed micro-batch regenerates exactly the same masks.
    """

    def __init__(self, seed: int, step: int, micro_index: int = 0):
        self.seed = seed
        self.step = step
        self.micro_index = micro_index

    def keep_mask(self, shape, drop_prob: float, layer: int, site: int, dtype) -> np.ndarray:
        rng = rng_stream(self.seed, LANE_DROPOUT, self.step, self.micro_index, layer, site)
        keep = 1.0 - drop_prob
        return (rng.random(shape) < keep).astype(dtype) / np.dtype(dtype).type(keep)


# --- primitives -----------------------------------------------------------


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * np.square(x))
    return cdf + x * pdf


def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def layer_norm_backward(dy: np.ndarray, g: np.ndarray, cache):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dg = np.sum(dy * xhat, axis=axes)
    db = np.sum(dy, axis=axes)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite activations in {where}")


def _split_heads(x: np.ndarray, h: int) -> np.ndarray:
    B, S, d = x.shape
    return x.reshape(B, S, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, h, S, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, S, h * dh)


# --- forward ---------------------------------------------------------------


def _forward(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    batch: Batch,
    train_mode: bool,
    streams: DropoutStreams | None,
):
    """Full forward pass; returns (loss, masked_logits, cache)."""
    if train_mode and streams is None and (config.dropout > 0 or config.attention_dropout > 0):
        raise ConfigError("train_mode with dropout requires DropoutStreams")
    E = params["emb_tok"]
    dtype = E.dtype
    ids = batch.input_ids
    B, S = ids.shape
    if S != config.seq_len:
        raise DataError(f"batch seq_len {S} != model seq_len {config.seq_len}")
    h = config.num_heads
    scale = dtype.type(1.0 / np.sqrt(config.head_size))

    drop = config.dropout if train_mode else 0.0
    attn_drop = config.attention_dropout if train_mode else 0.0

    def maybe_mask(shape, p, layer, site):
        if p <= 0:
            return None
        return streams.keep_mask(shape, p, layer, site, dtype)

    # Keys at or past an instance's true length are excluded from attention.
    key_mask = np.where(np.arange(S)[None, :] < batch.lengths[:, None], 0.0, _NEG_INF)
    key_mask = key_mask.astype(dtype)[:, None, None, :]

    x0 = E[ids] + params["emb_pos"][None, :, :]
    x, emb_ln_cache = layer_norm(x0, params["emb_ln_g"], params["emb_ln_b"])
    emb_mask = maybe_mask(x.shape, drop, 0, _SITE_EMB)
    if emb_mask is not None:
        x = x * emb_mask
    _check_finite(x, "embedding block")

    layers = []
    for i in range(config.num_layers):
        p = f"layer{i:02d}_"
        x_in = x
        q = _split_heads(x @ params[p + "attn_wq"] + params[p + "attn_bq"], h)
        k = _split_heads(x @ params[p + "attn_wk"] + params[p + "attn_bk"], h)
        v = _split_heads(x @ params[p + "attn_wv"] + params[p + "attn_bv"], h)
        scores = q @ k.transpose(0, 1, 3, 2) * scale + key_mask
        probs = _softmax(scores)
        probs_mask = maybe_mask(probs.shape, attn_drop, i, _SITE_ATTN_PROBS)
        probs_kept = probs if probs_mask is None else probs * probs_mask
        ctx = _merge_heads(probs_kept @ v)
        attn_out = ctx @ params[p + "attn_wo"] + params[p + "attn_bo"]
        attn_mask = maybe_mask(attn_out.shape, drop, i, _SITE_ATTN_OUT)
        if attn_mask is not None:
            attn_out = attn_out * attn_mask
        x1, ln1_cache = layer_norm(x_in + attn_out, params[p + "ln1_g"], params[p + "ln1_b"])

        pre1 = x1 @ params[p + "ffn_w1"] + params[p + "ffn_b1"]
        u = gelu(pre1)
        ffn_out = u @ params[p + "ffn_w2"] + params[p + "ffn_b2"]
        ffn_mask = maybe_mask(ffn_out.shape, drop, i, _SITE_FFN_OUT)
        if ffn_mask is not None:
            ffn_out = ffn_out * ffn_mask
        x, ln2_cache = layer_norm(x1 + ffn_out, params[p + "ln2_g"], params[p + "ln2_b"])
        _check_finite(x, f"encoder layer {i}")

        layers.append(
            dict(
                x_in=x_in, q=q, k=k, v=v, probs=probs, probs_mask=probs_mask,
                probs_kept=probs_kept, ctx=ctx, attn_mask=attn_mask,
                ln1_cache=ln1_cache, x1=x1, pre1=pre1, u=u, ffn_mask=ffn_mask,
                ln2_cache=ln2_cache,
            )
        )

    # Sparse prediction: only masked positions reach the vocabulary projection.
    hm = x[batch.mask_rows, batch.mask_cols]
    pre_h = hm @ params["head_w"] + params["head_b"]
    th_raw = gelu(pre_h)
    th, head_ln_cache = layer_norm(th_raw, params["head_ln_g"], params["head_ln_b"])
    logits = th @ E.T + params["out_bias"]
    _check_finite(logits, "mlm head")

    zmax = logits.max(axis=-1, keepdims=True)
    z = logits - zmax
    sumexp = np.exp(z).sum(axis=-1, keepdims=True)
    log_probs_at_label = z[np.arange(len(batch.labels)), batch.labels] - np.log(sumexp[:, 0])
    loss = float(-log_probs_at_label.mean())

    cache = dict(
        ids=ids, key_mask=key_mask, emb_mask=emb_mask, emb_ln_cache=emb_ln_cache,
        layers=layers, x_final=x, hm=hm, pre_h=pre_h, head_ln_cache=head_ln_cache,
        th=th, logits=logits, z=z, sumexp=sumexp, scale=scale,
    )
    return loss, logits, cache


def forward_mlm(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    batch: Batch,
    train_mode: bool = False,
    streams: DropoutStreams | None = None,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch's masked targets plus their logits."""
    loss, logits, _ = _forward(params, config, batch, train_mode, streams)
    return loss, logits


def encoder_hidden_states(
    params: dict[str, np.ndarray], config: ModelConfig, batch: Batch
) -> np.ndarray:
    """Final encoder output for every position (eval mode); (B, S, d)."""
    _, _, cache = _forward(params, config, batch, train_mode=False, streams=None)
    return cache["x_final"]


# --- backward --------------------------------------------------------------


def loss_and_grads(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    batch: Batch,
    train_mode: bool = False,
    streams: DropoutStreams | None = None,
) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
    """One forward/backward pass; gradients share shapes with params."""
    loss, logits, cache = _forward(params, config, batch, train_mode, streams)
    grads = {name: np.zeros_like(p) for name, p in params.items()}

    E = params["emb_tok"]
    M = batch.num_masked
    th = cache["th"]
    hm = cache["hm"]

    probs = np.exp(cache["z"]) / cache["sumexp"]
    dlogits = probs
    dlogits[np.arange(M), batch.labels] -= 1.0
    dlogits /= M

    grads["out_bias"] += dlogits.sum(axis=0)
    dth = dlogits @ E
    grads["emb_tok"] += dlogits.T @ th

    dth_raw, dg, db = layer_norm_backward(dth, params["head_ln_g"], cache["head_ln_cache"])
    grads["head_ln_g"] += dg
    grads["head_ln_b"] += db
    dpre_h = dth_raw * gelu_grad(cache["pre_h"])
    grads["head_w"] += hm.T @ dpre_h
    grads["head_b"] += dpre_h.sum(axis=0)
    dhm = dpre_h @ params["head_w"].T

    dx = np.zeros_like(cache["x_final"])
    np.add.at(dx, (batch.mask_rows, batch.mask_cols), dhm)

    h = config.num_heads
    scale = cache["scale"]
    for i in reversed(range(config.num_layers)):
        p = f"layer{i:02d}_"
        lc = cache["layers"][i]
        B, S, d = dx.shape

        dres2, dg, db = layer_norm_backward(dx, params[p + "ln2_g"], lc["ln2_cache"])
        grads[p + "ln2_g"] += dg
        grads[p + "ln2_b"] += db
        dffn_out = dres2 if lc["ffn_mask"] is None else dres2 * lc["ffn_mask"]
        du = dffn_out @ params[p + "ffn_w2"].T
        grads[p + "ffn_w2"] += lc["u"].reshape(-1, config.ffn_size).T @ dffn_out.reshape(-1, d)
        grads[p + "ffn_b2"] += dffn_out.sum(axis=(0, 1))
        dpre1 = du * gelu_grad(lc["pre1"])
        grads[p + "ffn_w1"] += lc["x1"].reshape(-1, d).T @ dpre1.reshape(-1, config.ffn_size)
        grads[p + "ffn_b1"] += dpre1.sum(axis=(0, 1))
        dx1 = dres2 + dpre1 @ params[p + "ffn_w1"].T

        dres1, dg, db = layer_norm_backward(dx1, params[p + "ln1_g"], lc["ln1_cache"])
        grads[p + "ln1_g"] += dg
        grads[p + "ln1_b"] += db
        dattn_out = dres1 if lc["attn_mask"] is None else dres1 * lc["attn_mask"]
        grads[p + "attn_wo"] += lc["ctx"].reshape(-1, d).T @ dattn_out.reshape(-1, d)
        grads[p + "attn_bo"] += dattn_out.sum(axis=(0, 1))
        dctx = _split_heads(dattn_out @ params[p + "attn_wo"].T, h)

        dprobs_kept = dctx @ lc["v"].transpose(0, 1, 3, 2)
        dv = lc["probs_kept"].transpose(0, 1, 3, 2) @ dctx
        dprobs = dprobs_kept if lc["probs_mask"] is None else dprobs_kept * lc["probs_mask"]
        a = lc["probs"]
        dscores = a * (dprobs - (dprobs * a).sum(axis=-1, keepdims=True))
        dq = dscores @ lc["k"] * scale
        dk = dscores.transpose(0, 1, 3, 2) @ lc["q"] * scale

        x_in2d = lc["x_in"].reshape(-1, d)
        dres1_in = dres1
        for name, dhead in (("attn_wq", dq), ("attn_wk", dk), ("attn_wv", dv)):
            d2d = _merge_heads(dhead).reshape(-1, d)
            grads[p + name] += x_in2d.T @ d2d
            grads[p + name.replace("w", "b")] += d2d.sum(axis=0)
            dres1_in = dres1_in + (d2d @ params[p + name].T).reshape(B, S, d)
        dx = dres1_in

    if cache["emb_mask"] is not None:
        dx = dx * cache["emb_mask"]
    dx0, dg, db = layer_norm_backward(dx, params["emb_ln_g"], cache["emb_ln_cache"])
    grads["emb_ln_g"] += dg
    grads["emb_ln_b"] += db
    np.add.at(grads["emb_tok"], cache["ids"], dx0)
    grads["emb_pos"] += dx0.sum(axis=0)

    return loss, logits, grads


def backward(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    batch: Batch,
    train_mode: bool = False,
    streams: DropoutStreams | None = None,
) -> dict[str, np.ndarray]:
    """Exact gradients of the masked-prediction loss for every parameter."""
    _, _, grads = loss_and_grads(params, config, batch, train_mode, streams)
    return grads


# --- parameters ------------------------------------------------------------


def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) truncated at +/- 2 std, resampling the tails."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while np.any(bad):
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x.astype(dtype)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Fresh parameter tensors: truncated-normal weights (std 0.02), zero biases,
    identity layer norms. The output projection is E.T, not a separate tensor."""
    dtype = np.dtype(dtype)
    rng = rng_stream(seed, LANE_INIT)
    d, f, V, S = config.hidden_size, config.ffn_size, config.vocab_size, config.seq_len

    params: dict[str, np.ndarray] = {}

    def w(name, shape):
        params[name] = _trunc_normal(rng, shape, 0.02, dtype)

    def zeros(name, shape):
        params[name] = np.zeros(shape, dtype=dtype)

    def ones(name, shape):
        params[name] = np.ones(shape, dtype=dtype)

    w("emb_tok", (V, d))
    w("emb_pos", (S, d))
    ones("emb_ln_g", d)
    zeros("emb_ln_b", d)
    for i in range(config.num_layers):
        p = f"layer{i:02d}_"
        for proj in ("attn_wq", "attn_wk", "attn_wv", "attn_wo"):
            w(p + proj, (d, d))
            zeros(p + proj.replace("w", "b"), d)
        ones(p + "ln1_g", d)
        zeros(p + "ln1_b", d)
        w(p + "ffn_w1", (d, f))
        zeros(p + "ffn_b1", f)
        w(p + "ffn_w2", (f, d))
        zeros(p + "ffn_b2", d)
        ones(p + "ln2_g", d)
        zeros(p + "ln2_b", d)
    w("head_w", (d, d))
    zeros("head_b", d)
    ones("head_ln_g", d)
    zeros("head_ln_b", d)
    zeros("out_bias", V)
    return params


def param_spec(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Expected name -> shape map for a config; used to validate checkpoints."""
    d, f, V, S = config.hidden_size, config.ffn_size, config.vocab_size, config.seq_len
    spec: dict[str, tuple[int, ...]] = {
        "emb_tok": (V, d), "emb_pos": (S, d), "emb_ln_g": (d,), "emb_ln_b": (d,),
    }
    for i in range(config.num_layers):
        p = f"layer{i:02d}_"
        for proj in ("attn_wq", "attn_wk", "attn_wv", "attn_wo"):
            spec[p + proj] = (d, d)
            spec[p + proj.replace("w", "b")] = (d,)
        spec[p + "ln1_g"] = (d,)
        spec[p + "ln1_b"] = (d,)
        spec[p + "ffn_w1"] = (d, f)
        spec[p + "ffn_b1"] = (f,)
        spec[p + "ffn_w2"] = (f, d)
        spec[p + "ffn_b2"] = (d,)
        spec[p + "ln2_g"] = (d,)
        spec[p + "ln2_b"] = (d,)
    spec.update({
        "head_w": (d, d), "head_b": (d,),
        "head_ln_g": (d,), "head_ln_b": (d,), "out_bias": (V,),
    })
    return spec
