"""Transformer encoder/decoder for masked two-view frame-embedding modeling.

The encoder maps visible merged frame embeddings into a shared latent space
(full bidirectional attention); the decoder reconstructs frame embeddings
either causally from its own view (self-view path, with a learned begin
token so position 0 has a key) or bidirectionally from its own mask-filled
tokens plus the other view's latents (cross-view path, with learned view
segment embeddings). Checkpoints round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, FormatError, ShapeError
from .numerics.adam import AdamState
from .numerics.tensor import (
    NEG_INF,
    Tensor,
    add,
    concat_cols,
    concat_rows,
    gather_rows,
    gelu,
    layer_norm,
    linear,
    masked_attention,
    matmul,
    row_scatter,
    slice_cols,
    slice_rows,
)

CHECKPOINT_MAGIC = b"BYVC"
CHECKPOINT_VERSION = 1


@dataclass
class ArchConfig:
    d: int = 768
    d_model: int = 256
    enc_blocks: int = 12
    dec_blocks: int = 4
    heads: int = 1
    enc_mlp_ratio: int = 4
    dec_mlp_ratio: int = 3
    max_len: int = 512
    eps: float = 1e-5

    def validate(self):
        if min(self.d, self.d_model, self.enc_blocks, self.dec_blocks,
               self.heads, self.max_len) <= 0:
            raise ContractError("architecture dimensions must be positive")
        if self.d_model % self.heads != 0:
            raise ContractError("d_model must be divisible by the head count")


@dataclass
class LatentSequence:
    data: Tensor               # (L, d_model)
    positions: np.ndarray      # source frame indices, strictly increasing
    video_id: str = ""
    view: str = ""


@dataclass
class MaskPlan:
    t: int
    masked: np.ndarray
    visible: np.ndarray
    ratio: float

    def validate(self):
        both = np.concatenate([self.masked, self.visible])
        if sorted(both.tolist()) != list(range(self.t)):
            raise ContractError("mask plan does not partition [0, T)")


# the key projection carries no bias: softmax attention is invariant to a
# score shift that is constant across keys, so a key bias can never receive
# gradient and would be dead weight
def _block_param_names(mlp_ratio: int):
    return ["ln1_g", "ln1_b", "wq", "bq", "wk", "wv", "bv", "wo", "bo",
            "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"]


class ModelParams:
    """All learnable parameters, with a stable declaration order."""

    def __init__(self, cfg: ArchConfig, rng: np.random.Generator,
                 dtype=np.float32, init_std: float = 0.02):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        dm = cfg.d_model

        def param(shape, std=init_std):
            if std == 0.0:
                arr = np.zeros(shape)
            else:
                arr = rng.normal(0.0, std, size=shape)
            return Tensor(arr.astype(self.dtype), requires_grad=True)

        def ones(shape):
            return Tensor(np.ones(shape, dtype=self.dtype), requires_grad=True)

        def block(mlp_ratio):
            hid = dm * mlp_ratio
            return {
                "ln1_g": ones(dm), "ln1_b": param(dm, 0.0),
                "wq": param((dm, dm)), "bq": param(dm, 0.0),
                "wk": param((dm, dm)),
                "wv": param((dm, dm)), "bv": param(dm, 0.0),
                "wo": param((dm, dm)), "bo": param(dm, 0.0),
                "ln2_g": ones(dm), "ln2_b": param(dm, 0.0),
                "w1": param((dm, hid)), "b1": param(hid, 0.0),
                "w2": param((hid, dm)), "b2": param(dm, 0.0),
            }

        self.w_in = param((cfg.d, dm))
        self.b_in = param(dm, 0.0)
        self.pos_embed = param((cfg.max_len, dm))
        self.enc = [block(cfg.enc_mlp_ratio) for _ in range(cfg.enc_blocks)]
        self.enc_lnf_g, self.enc_lnf_b = ones(dm), param(dm, 0.0)
        self.dec = [block(cfg.dec_mlp_ratio) for _ in range(cfg.dec_blocks)]
        self.dec_lnf_g, self.dec_lnf_b = ones(dm), param(dm, 0.0)
        self.w_out = param((dm, cfg.d))
        self.b_out = param(cfg.d, 0.0)
        self.mask_token = param((1, dm))
        self.begin_token = param((1, dm))
        self.seg_own = param((1, dm))
        self.seg_other = param((1, dm))

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = [("w_in", self.w_in), ("b_in", self.b_in), ("pos_embed", self.pos_embed)]
        for i, blk in enumerate(self.enc):
            for name in _block_param_names(self.cfg.enc_mlp_ratio):
                out.append((f"enc.{i}.{name}", blk[name]))
        out += [("enc_lnf_g", self.enc_lnf_g), ("enc_lnf_b", self.enc_lnf_b)]
        for i, blk in enumerate(self.dec):
            for name in _block_param_names(self.cfg.dec_mlp_ratio):
                out.append((f"dec.{i}.{name}", blk[name]))
        out += [("dec_lnf_g", self.dec_lnf_g), ("dec_lnf_b", self.dec_lnf_b),
                ("w_out", self.w_out), ("b_out", self.b_out),
                ("mask_token", self.mask_token), ("begin_token", self.begin_token),
                ("seg_own", self.seg_own), ("seg_other", self.seg_other)]
        return out

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def zero_grads(self):
        for p in self.params():
            p.grad = None

    def param_counts(self) -> dict[str, int]:
        """Element counts split into the encoder side (including the input
        projection and positional table) and the decoder side (including the
        output projection and the learned special tokens)."""
        enc = dec = 0
        for name, p in self.named_params():
            if name.startswith(("w_in", "b_in", "pos_embed", "enc")):
                enc += p.data.size
            else:
                dec += p.data.size
        return {"encoder": enc, "decoder": dec, "total": enc + dec}

    def assert_finite(self):
        for name, p in self.named_params():
            p.assert_finite(f"parameter {name}")


def _attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray],
               heads: int) -> Tensor:
    if heads == 1:
        return masked_attention(q, k, v, mask)
    dh = q.shape[1] // heads
    outs = [masked_attention(slice_cols(q, i * dh, (i + 1) * dh),
                             slice_cols(k, i * dh, (i + 1) * dh),
                             slice_cols(v, i * dh, (i + 1) * dh), mask)
            for i in range(heads)]
    return concat_cols(outs)


def _block_forward(h: Tensor, blk: dict, mask: Optional[np.ndarray],
                   cfg: ArchConfig) -> Tensor:
    x = layer_norm(h, blk["ln1_g"], blk["ln1_b"], cfg.eps)
    q = linear(x, blk["wq"], blk["bq"])
    k = matmul(x, blk["wk"])
    v = linear(x, blk["wv"], blk["bv"])
    att = _attention(q, k, v, mask, cfg.heads)
    h = add(h, linear(att, blk["wo"], blk["bo"]))
    y = layer_norm(h, blk["ln2_g"], blk["ln2_b"], cfg.eps)
    h = add(h, linear(gelu(linear(y, blk["w1"], blk["b1"])), blk["w2"], blk["b2"]))
    return h


def _block_diag_full_mask(lengths: list[int], dtype) -> np.ndarray:
    """Additive mask restricting attention to within-segment positions."""
    n = sum(lengths)
    mask = np.full((n, n), NEG_INF, dtype=dtype)
    off = 0
    for ln in lengths:
        mask[off:off + ln, off:off + ln] = 0.0
        off += ln
    return mask


def encode_packed(params: ModelParams,
                  seqs: list[tuple] ) -> list[LatentSequence]:
    """Encode several independent sequences in one pass.

    seqs holds (rows, positions) pairs; a block-diagonal attention mask keeps
    the sequences independent, so the result matches per-sequence encoding
    while the underlying matrix products run at the combined length.
    """
    if not seqs:
        raise ContractError("encode_packed needs at least one sequence")
    xs, pos_list = [], []
    for rows, positions in seqs:
        x = rows if isinstance(rows, Tensor) else \
            Tensor(np.asarray(rows, dtype=params.dtype))
        positions = np.asarray(positions, dtype=np.int64)
        if x.data.ndim != 2 or x.data.shape[1] != params.cfg.d:
            raise ShapeError(f"encoder input must be L x {params.cfg.d}, got {x.data.shape}")
        if x.data.shape[0] == 0:
            raise ContractError("cannot encode an empty sequence")
        if len(positions) != x.data.shape[0]:
            raise ContractError("positions do not align with the input rows")
        if len(positions) and (positions.min() < 0 or positions.max() >= params.cfg.max_len):
            raise ContractError("frame positions outside the positional table")
        xs.append(x)
        pos_list.append(positions)
    lengths = [x.data.shape[0] for x in xs]
    if max(lengths) > params.cfg.max_len:
        raise ContractError(f"sequence length {max(lengths)} exceeds max_len {params.cfg.max_len}")
    x_all = xs[0] if len(xs) == 1 else concat_rows(xs)
    pos_all = np.concatenate(pos_list)
    mask = None if len(xs) == 1 else _block_diag_full_mask(lengths, params.dtype)
    h = linear(x_all, params.w_in, params.b_in)
    h = add(h, gather_rows(params.pos_embed, pos_all))
    for blk in params.enc:
        h = _block_forward(h, blk, mask, params.cfg)
    h = layer_norm(h, params.enc_lnf_g, params.enc_lnf_b, params.cfg.eps)
    out, off = [], 0
    for ln, positions in zip(lengths, pos_list):
        z = h if len(xs) == 1 else slice_rows(h, off, off + ln)
        out.append(LatentSequence(data=z, positions=positions))
        off += ln
    return out


def encode(params: ModelParams, xbar_visible, positions,
           video_id: str = "", view: str = "") -> LatentSequence:
    """Map a visible subset of merged frame embeddings into the latent space."""
    z = encode_packed(params, [(xbar_visible, positions)])[0]
    z.video_id = video_id
    z.view = view
    return z


def build_mask_filled(params: ModelParams, z_visible: Optional[LatentSequence],
                      plan: MaskPlan, t_total: int) -> Tensor:
    """Full-length decoder input: visible latents and mask tokens at their
    frame positions, positional embedding added to every row."""
    if plan.t != t_total:
        raise ContractError(f"plan covers T={plan.t}, expected {t_total}")
    plan.validate()
    if (z_visible is None) != (len(plan.visible) == 0):
        raise ContractError("visible latents do not match the mask plan")
    if z_visible is not None and not np.array_equal(z_visible.positions, plan.visible):
        raise ContractError("visible latents are not aligned with plan.visible")
    filled = row_scatter(None if z_visible is None else z_visible.data,
                         params.mask_token, plan.visible, plan.masked, t_total)
    return add(filled, gather_rows(params.pos_embed, np.arange(t_total)))


def causal_mask(length: int, dtype=np.float32) -> np.ndarray:
    """Strict causal additive mask over [begin, t0, ..., t_{L-1}].

    Data token t attends to the begin token and data tokens < t only
    (self-attention excluded); the begin token attends to itself.
    """
    if length < 1:
        raise ContractError("causal_mask needs length >= 1")
    n = length + 1
    mask = np.full((n, n), NEG_INF, dtype=dtype)
    for i in range(1, n):
        mask[i, 0] = 0.0
        mask[i, 1:i] = 0.0
    mask[0, 0] = 0.0
    return mask


def decode_packed(params: ModelParams, items: list[tuple]) -> list[Tensor]:
    """Run several independent decoder jobs in one pass.

    Each item is ("self", mask_filled, causal) or
    ("cross", mask_filled_own, z_other: LatentSequence); a block-diagonal
    attention mask keeps jobs independent, so results match per-job decoding.
    Returns each job's reconstructed T x d rows.
    """
    if not items:
        raise ContractError("decode_packed needs at least one job")
    segments: list[Tensor] = []
    # (segment length, rows to keep relative to the segment start)
    spans: list[tuple[int, int, int]] = []
    sub_masks: list[Optional[np.ndarray]] = []
    for item in items:
        if item[0] == "self":
            _, mask_filled, causal = item
            t_total = mask_filled.data.shape[0]
            segments.append(concat_rows([params.begin_token, mask_filled]))
            spans.append((t_total + 1, 1, t_total + 1))
            sub_masks.append(causal_mask(t_total, dtype=params.dtype) if causal else None)
        elif item[0] == "cross":
            _, mask_filled_own, z_other = item
            t_own = mask_filled_own.data.shape[0]
            t_other = z_other.data.data.shape[0]
            if t_own == 0 or t_other == 0:
                raise ContractError("cross-view decoding requires both sequences nonempty")
            if t_own + t_other > params.cfg.max_len:
                raise ContractError(f"combined length {t_own + t_other} exceeds max_len")
            own = add(mask_filled_own, params.seg_own)
            other = add(add(z_other.data, gather_rows(params.pos_embed, z_other.positions)),
                        params.seg_other)
            segments.append(concat_rows([own, other]))
            spans.append((t_own + t_other, 0, t_own))
            sub_masks.append(None)
        else:
            raise ContractError(f"unknown decode job kind '{item[0]}'")

    lengths = [s[0] for s in spans]
    if len(items) == 1:
        mask = sub_masks[0]
        h = segments[0]
    else:
        mask = _block_diag_full_mask(lengths, params.dtype)
        off = 0
        for ln, sub in zip(lengths, sub_masks):
            if sub is not None:
                mask[off:off + ln, off:off + ln] = sub
            off += ln
        h = concat_rows(segments)
    for blk in params.dec:
        h = _block_forward(h, blk, mask, params.cfg)
    h = layer_norm(h, params.dec_lnf_g, params.dec_lnf_b, params.cfg.eps)
    y = linear(h, params.w_out, params.b_out)
    out, off = [], 0
    for ln, lo, hi in spans:
        out.append(slice_rows(y, off + lo, off + hi))
        off += ln
    return out


def decode_msm(params: ModelParams, mask_filled: Tensor, causal: bool = True) -> Tensor:
    """Causal self-view decoding of a mask-filled sequence; returns T x d."""
    return decode_packed(params, [("self", mask_filled, causal)])[0]


def decode_mcm(params: ModelParams, mask_filled_own: Tensor,
               z_other: LatentSequence) -> Tensor:
    """Cross-view decoding: own mask-filled tokens plus the other view's
    latents, bidirectional attention; returns the own view's T x d rows."""
    return decode_packed(params, [("cross", mask_filled_own, z_other)])[0]


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def _write_tensor_record(f, name: str, arr: np.ndarray):
    enc = name.encode()
    f.write(struct.pack("<H", len(enc)))
    f.write(enc)
    f.write(struct.pack("<B", arr.ndim))
    for s in arr.shape:
        f.write(struct.pack("<I", s))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensor_record(f) -> tuple[str, np.ndarray]:
    raw = f.read(2)
    if len(raw) < 2:
        raise FormatError("truncated checkpoint: missing tensor record")
    (name_len,) = struct.unpack("<H", raw)
    name = f.read(name_len).decode()
    (ndim,) = struct.unpack("<B", f.read(1))
    shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(f.read(4 * count), dtype="<f4")
    if data.size != count:
        raise FormatError(f"truncated checkpoint: tensor '{name}'")
    return name, data.reshape(shape).copy()


def save_checkpoint(path: str, params: ModelParams, step: int = 0,
                    rng_state: Optional[dict] = None,
                    opt: Optional[AdamState] = None) -> None:
    header = {
        "arch": asdict(params.cfg),
        "step": step,
        "rng_state": rng_state,
        "opt": None if opt is None else {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "step_count": opt.step_count,
        },
        "num_tensors": None,
    }
    names = params.named_params()
    opt_names = []
    if opt is not None:
        for name, _ in names:
            if name in opt.m:
                opt_names.append(name)
    header["num_tensors"] = len(names) + 2 * len(opt_names)
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, p in names:
            _write_tensor_record(f, name, p.data)
        for name in opt_names:
            _write_tensor_record(f, f"opt.m.{name}", opt.m[name])
            _write_tensor_record(f, f"opt.v.{name}", opt.v[name])


def load_checkpoint(path: str) -> tuple[ModelParams, int, Optional[dict], Optional[AdamState]]:
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        cfg = ArchConfig(**header["arch"])
        params = ModelParams(cfg, np.random.default_rng(0))
        tensors = dict(_read_tensor_record(f) for _ in range(header["num_tensors"]))
    for name, p in params.named_params():
        if name not in tensors:
            raise FormatError(f"{path}: missing parameter '{name}'")
        if tensors[name].shape != p.data.shape:
            raise FormatError(f"{path}: shape mismatch for '{name}'")
        p.data = tensors[name]
    opt = None
    if header["opt"] is not None:
        o = header["opt"]
        opt = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"],
                        eps=o["eps"], step_count=o["step_count"])
        for name, p in params.named_params():
            mk, vk = f"opt.m.{name}", f"opt.v.{name}"
            if mk in tensors:
                opt.m[name] = tensors[mk]
                opt.v[name] = tensors[vk]
    return params, header["step"], header.get("rng_state"), opt
