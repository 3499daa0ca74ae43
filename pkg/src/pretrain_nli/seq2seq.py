"""Attentional LSTM encoder-decoder classifier with hand-written gradients.

The encoder runs a stacked LSTM over the premise; its final per-layer
``(h, c)`` seed the decoder, which reads the hypothesis. The decoder's final
top-layer state attends over the encoder's top-layer states (local-p window,
dot scores, Gaussian position weighting) and the combined state
``tanh(Wc [context; h])`` feeds a softmax over labels.

Batches are right-padded. On padded steps an LSTM layer copies its previous
state forward, so the state at the last column is each row's true final
state; padded memory slots never receive attention.

Gate order inside every ``4d x 2d`` LSTM matrix is i, f, g, o and the matrix
acts on ``[x; h_prev]``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .initializers import InitSpec, init_matrix


class NumericalError(FloatingPointError):
    """Non-finite activation or loss."""


@dataclass(frozen=True)
class ModelConfig:
    d: int = 300
    layers: int = 2
    num_labels: int = 3
    dropout_p: float = 0.2
    attention: bool = True
    window_D: int = 5
    forget_bias: float = 1.0
    dtype: str = "float64"

    def __post_init__(self):
        if self.d < 1 or self.layers < 1 or self.num_labels < 1:
            raise ValueError("d, layers and num_labels must be >= 1")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.attention and self.window_D < 1:
            raise ValueError("window_D must be >= 1 with attention")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")


EMBEDDING_KEYS = ("enc_emb", "dec_emb")


def param_shapes(config: ModelConfig, vocab_size: int) -> dict:
    d, K = config.d, config.num_labels
    shapes = {"enc_emb": (vocab_size, d), "dec_emb": (vocab_size, d)}
    for side in ("enc", "dec"):
        for l in range(config.layers):
            shapes[f"{side}_W{l}"] = (4 * d, 2 * d)
            shapes[f"{side}_b{l}"] = (4 * d,)
    if config.attention:
        shapes["att_Wp"] = (d, d)
        shapes["att_v"] = (d,)
        shapes["att_Wc"] = (d, 2 * d)
    shapes["out_W"] = (K, d)
    shapes["out_b"] = (K,)
    return shapes


def init_params(config: ModelConfig, vocab_size: int, init: InitSpec,
                enc_emb: np.ndarray | None = None, dec_emb: np.ndarray | None = None) -> dict:
    """Fresh parameters. Weight matrices follow ``init``; biases are zero
    except the forget-gate slice. Missing embeddings are N(0, 1)."""
    rng = np.random.default_rng(init.seed)
    dtype = np.dtype(config.dtype)
    params = {}
    for name, shape in param_shapes(config, vocab_size).items():
        if name in EMBEDDING_KEYS:
            given = enc_emb if name == "enc_emb" else dec_emb
            if given is None:
                given = rng.standard_normal(shape)
            given = np.asarray(given, dtype=np.float64)
            if given.shape != shape:
                raise ValueError(f"{name} has shape {given.shape}, expected {shape}")
            params[name] = given.astype(dtype, copy=True)
        elif "_b" in name and len(shape) == 1 and name != "att_v":
            b = np.zeros(shape)
            if name.startswith(("enc_b", "dec_b")):
                b[config.d:2 * config.d] = config.forget_bias
            params[name] = b.astype(dtype)
        elif len(shape) == 1:
            params[name] = init_matrix(1, shape[0], init, rng, block=shape[0])[0].astype(dtype)
        else:
            # gate matrices: one d x d block per (gate, input half)
            params[name] = init_matrix(*shape, init, rng, block=config.d).astype(dtype)
    return params


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_step(prev_h, prev_c, x, W, b):
    """One LSTM transition; works on single vectors or row-stacked batches."""
    h, c, _ = _lstm_step(prev_h, prev_c, x, W, b)
    return h, c


def _lstm_step(prev_h, prev_c, x, W, b):
    d = prev_h.shape[-1]
    inp = np.concatenate([x, prev_h], axis=-1)
    a = inp @ W.T + b
    i = sigmoid(a[..., :d])
    f = sigmoid(a[..., d:2 * d])
    g = np.tanh(a[..., 2 * d:3 * d])
    o = sigmoid(a[..., 3 * d:])
    c = f * prev_c + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (inp, i, f, g, o, tc)


def _layer_forward(X, mask, h0, c0, W, b):
    B, T, _ = X.shape
    d = h0.shape[1]
    H = np.empty((B, T, d), dtype=X.dtype)
    C = np.empty((B, T, d), dtype=X.dtype)
    steps = []
    h, c = h0, c0
    for t in range(T):
        m = mask[:, t:t + 1]
        hn, cn, cache = _lstm_step(h, c, X[:, t], W, b)
        steps.append((c, m) + cache)
        h = m * hn + (1 - m) * h
        c = m * cn + (1 - m) * c
        H[:, t], C[:, t] = h, c
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(C))):
        raise NumericalError("non-finite LSTM activation")
    return H, C, steps


def _layer_backward(dH, dc_last, steps, W):
    """Backprop one layer. ``dH`` holds gradients on every emitted h (the last
    column includes the final state); returns dX, dh0, dc0, dW, db."""
    B, T, d = dH.shape
    din = W.shape[1] - d
    dX = np.zeros((B, T, din), dtype=dH.dtype)
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[0], dtype=dH.dtype)
    dh = np.zeros((B, d), dtype=dH.dtype)
    dc = dc_last
    for t in range(T - 1, -1, -1):
        c_prev, m, inp, i, f, g, o, tc = steps[t]
        dh = dh + dH[:, t]
        dhn, dcn = m * dh, m * dc
        dh_prev, dc_prev = (1 - m) * dh, (1 - m) * dc
        do = dhn * tc
        dcn = dcn + dhn * o * (1 - tc * tc)
        dc_prev = dc_prev + dcn * f
        da = np.concatenate([
            dcn * g * i * (1 - i),
            dcn * c_prev * f * (1 - f),
            dcn * i * (1 - g * g),
            do * o * (1 - o)], axis=1)
        dW += da.T @ inp
        db += da.sum(axis=0)
        dinp = da @ W
        dX[:, t] = dinp[:, :din]
        dh, dc = dh_prev + dinp[:, din:], dc_prev
    return dX, dh, dc, dW, db


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0):
    """Right-pad id sequences; returns ``(ids, mask, lengths)``."""
    if not seqs or any(len(s) == 0 for s in seqs):
        raise ValueError("sequences must be nonempty")
    lengths = np.array([len(s) for s in seqs])
    T = int(lengths.max())
    ids = np.full((len(seqs), T), pad_id, dtype=np.int64)
    for k, s in enumerate(seqs):
        ids[k, :len(s)] = s
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)
    return ids, mask, lengths


def _dropout_mask(rng, shape, p, dtype):
    if rng is None or p == 0:
        return None
    return (rng.random(shape) >= p).astype(dtype) / (1.0 - p)


@dataclass
class ForwardState:
    """Encoder output plus whatever backprop needs."""
    memory: np.ndarray              # (B, T, d) top-layer states
    mask: np.ndarray                # (B, T)
    lengths: np.ndarray
    final_h: list                   # per layer (B, d)
    final_c: list
    ids: np.ndarray
    caches: list = field(default_factory=list, repr=False)
    drop: list = field(default_factory=list, repr=False)


def _check_ids(ids, vocab_size):
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise IndexError(f"token id out of range [0, {vocab_size})")


def _run_stack(params, side, config, ids, mask, h0s, c0s, rng):
    emb = params[f"{side}_emb"]
    _check_ids(ids, emb.shape[0])
    dtype = emb.dtype
    X = emb[ids]
    mask = mask.astype(dtype)
    caches, drops = [], []
    fh, fc = [], []
    for l in range(config.layers):
        dm = _dropout_mask(rng, X.shape, config.dropout_p, dtype)
        Xin = X * dm if dm is not None else X
        H, C, steps = _layer_forward(Xin, mask, h0s[l], c0s[l],
                                     params[f"{side}_W{l}"], params[f"{side}_b{l}"])
        caches.append(steps)
        drops.append(dm)
        fh.append(H[:, -1])
        fc.append(C[:, -1])
        X = H
    return X, fh, fc, caches, drops


def _encode(params, config, ids, mask, lengths, rng):
    B = ids.shape[0]
    dtype = params["enc_emb"].dtype
    zeros = [np.zeros((B, config.d), dtype=dtype)] * config.layers
    M, fh, fc, caches, drops = _run_stack(params, "enc", config, ids, mask, zeros, zeros, rng)
    return ForwardState(M, mask.astype(dtype), lengths, fh, fc, ids, caches, drops)


def attention_weights(h, memory, mask, lengths, Wp, v, window_D):
    """Local-p weights over memory positions for a batch of query states.

    Returns ``(weights, aux)`` where ``aux`` carries intermediates for
    backprop.
    """
    B, T, _ = memory.shape
    S = lengths.astype(h.dtype)
    u = np.tanh(h @ Wp.T)
    sg = sigmoid(u @ v)
    p_raw = S * sg
    p = np.minimum(p_raw, S - 1)
    sigma = window_D / 2.0
    pos = np.arange(T, dtype=h.dtype)[None, :]
    off = pos - p[:, None]
    window = (mask > 0) & (np.abs(off) <= window_D)
    z = np.einsum("btd,bd->bt", memory, h) - off * off / (2 * sigma * sigma)
    z = np.where(window, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    w = np.where(window, np.exp(z), 0.0)
    w = w / w.sum(axis=1, keepdims=True)
    return w, (u, sg, p_raw, p, off, sigma, S)


def attend(decoder_h, memory, attn_params, window_D, mask=None):
    """Context vector(s) for ``decoder_h`` over ``memory``.

    Accepts a single query ``(d,)`` with memory ``(S, d)`` or batched
    ``(B, d)`` / ``(B, T, d)``. ``attn_params`` is ``(Wp, v)`` or a params dict.
    """
    if isinstance(attn_params, dict):
        Wp, v = attn_params["att_Wp"], attn_params["att_v"]
    else:
        Wp, v = attn_params
    single = np.ndim(decoder_h) == 1
    h = np.atleast_2d(decoder_h)
    M = np.asarray(memory)[None] if single else np.asarray(memory)
    if M.shape[1] == 0:
        raise ValueError("empty memory")
    if mask is None:
        mask = np.ones(M.shape[:2])
    mask = np.atleast_2d(mask)
    lengths = mask.sum(axis=1)
    w, _ = attention_weights(h, M, mask, lengths, Wp, v, window_D)
    ctx = np.einsum("bt,btd->bd", w, M)
    return (ctx[0], w[0]) if single else (ctx, w)


def _decode(params, config, state: ForwardState, ids, mask, rng):
    top, fh, fc, caches, drops = _run_stack(params, "dec", config, ids, mask,
                                            state.final_h, state.final_c, rng)
    h = top[:, -1]
    aux = None
    if config.attention:
        w, att = attention_weights(h, state.memory, state.mask, state.lengths,
                                   params["att_Wp"], params["att_v"], config.window_D)
        ctx = np.einsum("bt,btd->bd", w, state.memory)
        cat = np.concatenate([ctx, h], axis=1)
        feat = np.tanh(cat @ params["att_Wc"].T)
        aux = (w, att, ctx, cat)
    else:
        feat = h
    dm = _dropout_mask(rng, feat.shape, config.dropout_p, feat.dtype)
    feat_d = feat * dm if dm is not None else feat
    logits = feat_d @ params["out_W"].T + params["out_b"]
    logits = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(probs)):
        raise NumericalError("non-finite output probabilities")
    cache = dict(top=top, caches=caches, drops=drops, ids=ids, h=h, feat=feat,
                 feat_d=feat_d, feat_drop=dm, aux=aux)
    return probs, cache


def _as_batch(seqs):
    if len(seqs) and np.isscalar(seqs[0]):
        return [list(seqs)]
    return [list(s) for s in seqs]


def encode(premise, params, config: ModelConfig, dropout_mask_seed=None) -> ForwardState:
    """Run the encoder. ``premise`` is one id list or a list of them.

    ``dropout_mask_seed=None`` is evaluation mode (no dropout).
    """
    ids, mask, lengths = pad_batch(_as_batch(premise))
    rng = None if dropout_mask_seed is None else np.random.default_rng(dropout_mask_seed)
    return _encode(params, config, ids, mask, lengths, rng)


def classify(hypothesis, encoder_state: ForwardState, params, config: ModelConfig,
             dropout_mask_seed=None) -> np.ndarray:
    """Label distribution(s); a single id list gives a single vector."""
    single = len(hypothesis) > 0 and np.isscalar(hypothesis[0])
    ids, mask, _ = pad_batch(_as_batch(hypothesis))
    rng = None if dropout_mask_seed is None else np.random.default_rng(dropout_mask_seed)
    probs, _ = _decode(params, config, encoder_state, ids, mask, rng)
    return probs[0] if single else probs


def forward(params, config, premises, hypotheses, rng=None):
    """Batched forward pass; returns ``(probs, state, cache)``."""
    P, pm, pl = pad_batch(premises)
    Hy, hm, _ = pad_batch(hypotheses)
    state = _encode(params, config, P, pm, pl, rng)
    probs, cache = _decode(params, config, state, Hy, hm, rng)
    return probs, state, cache


def predict_proba(params, config, premises, hypotheses, batch_size=256):
    out = []
    for s in range(0, len(premises), batch_size):
        probs, _, _ = forward(params, config, premises[s:s + batch_size],
                              hypotheses[s:s + batch_size])
        out.append(probs)
    return np.concatenate(out, axis=0)


def _backward(params, config, state: ForwardState, cache, dlogits, need_embeddings=True):
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    feat_d = cache["feat_d"]
    grads["out_W"] = dlogits.T @ feat_d
    grads["out_b"] = dlogits.sum(axis=0)
    dfeat = dlogits @ params["out_W"]
    if cache["feat_drop"] is not None:
        dfeat = dfeat * cache["feat_drop"]
    h = cache["h"]
    M = state.memory
    dM = np.zeros_like(M)
    if config.attention:
        w, (u, sg, p_raw, p, off, sigma, S), ctx, cat = cache["aux"]
        feat = cache["feat"]
        dpre = dfeat * (1 - feat * feat)
        grads["att_Wc"] = dpre.T @ cat
        dcat = dpre @ params["att_Wc"]
        dctx, dh = dcat[:, :config.d], dcat[:, config.d:]
        dw = np.einsum("btd,bd->bt", M, dctx)
        dM += w[:, :, None] * dctx[:, None, :]
        dz = w * (dw - np.sum(w * dw, axis=1, keepdims=True))
        dM += dz[:, :, None] * h[:, None, :]
        dh = dh + np.einsum("bt,btd->bd", dz, M)
        dp = np.sum(dz * off, axis=1) / (sigma * sigma)
        dp = np.where(p_raw > S - 1, 0.0, dp)
        ds = dp * S * sg * (1 - sg)
        grads["att_v"] = ds @ u
        du = ds[:, None] * params["att_v"][None, :]
        dpu = du * (1 - u * u)
        grads["att_Wp"] = dpu.T @ h
        dh = dh + dpu @ params["att_Wp"]
    else:
        dh = dfeat

    def stack_backward(side, caches, drops, ids, dtop, dfinal_h, dfinal_c):
        dH = dtop
        dh0s, dc0s = [None] * config.layers, [None] * config.layers
        for l in range(config.layers - 1, -1, -1):
            if dfinal_h is not None:
                dH[:, -1] += dfinal_h[l]
            dc_last = dfinal_c[l] if dfinal_c is not None else np.zeros_like(dH[:, 0])
            dX, dh0, dc0, dW, db = _layer_backward(dH, dc_last, caches[l], params[f"{side}_W{l}"])
            grads[f"{side}_W{l}"] = dW
            grads[f"{side}_b{l}"] = db
            dh0s[l], dc0s[l] = dh0, dc0
            if drops[l] is not None:
                dX = dX * drops[l]
            dH = dX
        if need_embeddings:
            np.add.at(grads[f"{side}_emb"], ids, dH)
        return dh0s, dc0s

    dtop = np.zeros_like(cache["top"])
    dtop[:, -1] += dh
    dh0s, dc0s = stack_backward("dec", cache["caches"], cache["drops"], cache["ids"],
                                dtop, None, None)
    stack_backward("enc", state.caches, state.drop, state.ids, dM, dh0s, dc0s)
    return grads


def loss_and_gradients(batch, params, config: ModelConfig, dropout_seed=None,
                       need_embeddings: bool = True):
    """Mean cross-entropy over ``(premise_ids, hypothesis_ids, label)`` items
    and its gradient for every parameter."""
    if not batch:
        raise ValueError("empty batch")
    premises = [list(b[0]) for b in batch]
    hypotheses = [list(b[1]) for b in batch]
    labels = np.array([int(b[2]) for b in batch])
    if labels.min() < 0 or labels.max() >= config.num_labels:
        raise ValueError("label index out of range")
    rng = None if dropout_seed is None else np.random.default_rng(dropout_seed)
    probs, state, cache = forward(params, config, premises, hypotheses, rng)
    B = len(batch)
    picked = probs[np.arange(B), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, np.finfo(probs.dtype).tiny))))
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    return loss, _backward(params, config, state, cache, dlogits, need_embeddings)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"PNLICKPT"
VERSION = 1


def save_checkpoint(path, params: dict, meta: dict) -> None:
    """Binary container: magic, version, JSON meta block, named f8 tensors."""
    from .io_utils import atomic_write_bytes

    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    out += struct.pack("<Q", len(blob)) + blob
    out += struct.pack("<I", len(params))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += arr.tobytes()
    atomic_write_bytes(path, bytes(out))


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<Q", data, off)
    off += 8
    meta = json.loads(data[off:off + n].decode("utf-8"))
    off += n
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params = {}
    for _ in range(count):
        (nl,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nl].decode("utf-8")
        off += nl
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    if off != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return params, meta


def config_to_dict(config: ModelConfig) -> dict:
    return asdict(config)
