"""Desk-scale in-context segmentation transformer.

The model consumes a stacked input canvas (reference image over query image)
and a stacked target canvas (reference annotation over query mask), cut into
patches. Each patch becomes one token: the sum of an input-stream embedding,
a target-stream embedding (or a learnable placeholder token wherever the
occlusion plan hides the target), a positional embedding, and a prompt-kind
token that tells the network whether the reference annotation is a full mask
or a scribble. A transformer trunk plus a linear head regress the target
canvas pixels in normalized [0, 1] space; training scores only the occluded
patches, and inference occludes exactly the query half.

Parameter count for a config with D = embed_dim, P = patch_size,
N = 2*(canvas_side/P)^2 tokens and patch vector length V = 3*P^2:

    2*(V*D + D)              input & target patch embeddings
    + N*D                    positional embeddings
    + 3*D                    placeholder / full-mask / scribble tokens
    + depth * (12*D^2 + 13*D)  blocks (attention qkvo + 4x MLP + 2 norms)
    + 2*D                    final norm
    + D*V + V                pixel head
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .datapipe import PromptKind, TrainExample
from .errors import (CorruptCheckpoint, Diverged, EmptyOcclusion, ShapeMismatch)
from .palette import ColorPalette, decode_mask
from .rasters import ClassMask, ImageBuffer
from .rng import Rng

MLP_RATIO = 4
_MAGIC = b"SGLB"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    canvas_side: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.canvas_side % self.patch_size != 0:
            raise ValueError("canvas_side must be divisible by patch_size")
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if min(self.canvas_side, self.patch_size, self.embed_dim,
               self.depth, self.heads) < 1:
            raise ValueError("config dimensions must be positive")

    @property
    def grid_rows(self) -> int:
        return 2 * self.canvas_side // self.patch_size

    @property
    def grid_cols(self) -> int:
        return self.canvas_side // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def query_patch_indices(self) -> np.ndarray:
        """Indices of the bottom (query) half of the token grid."""
        half = self.num_patches // 2
        return np.arange(half, self.num_patches)

    @property
    def patch_vector_len(self) -> int:
        return 3 * self.patch_size * self.patch_size

    def to_jsonable(self) -> dict:
        return {
            "canvas_side": self.canvas_side,
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "heads": self.heads,
            "seed": self.seed,
        }

    @classmethod
    def from_jsonable(cls, doc: dict) -> "ModelConfig":
        return cls(**{k: int(doc[k]) for k in
                      ("canvas_side", "patch_size", "embed_dim", "depth", "heads", "seed")})


def parameter_spec(cfg: ModelConfig) -> list:
    """Ordered (name, shape) table; also the checkpoint tensor order."""
    D, V, N = cfg.embed_dim, cfg.patch_vector_len, cfg.num_patches
    H = MLP_RATIO * D
    spec = [
        ("embed.input.W", (V, D)), ("embed.input.b", (D,)),
        ("embed.target.W", (V, D)), ("embed.target.b", (D,)),
        ("pos", (N, D)),
        ("token.mask", (D,)), ("token.seg", (D,)), ("token.scribble", (D,)),
    ]
    for i in range(cfg.depth):
        b = f"block{i}"
        spec += [
            (f"{b}.ln1.g", (D,)), (f"{b}.ln1.b", (D,)),
            (f"{b}.attn.q.W", (D, D)), (f"{b}.attn.q.b", (D,)),
            (f"{b}.attn.k.W", (D, D)), (f"{b}.attn.k.b", (D,)),
            (f"{b}.attn.v.W", (D, D)), (f"{b}.attn.v.b", (D,)),
            (f"{b}.attn.o.W", (D, D)), (f"{b}.attn.o.b", (D,)),
            (f"{b}.ln2.g", (D,)), (f"{b}.ln2.b", (D,)),
            (f"{b}.mlp.fc1.W", (D, H)), (f"{b}.mlp.fc1.b", (H,)),
            (f"{b}.mlp.fc2.W", (H, D)), (f"{b}.mlp.fc2.b", (D,)),
        ]
    spec += [
        ("norm.g", (D,)), ("norm.b", (D,)),
        ("head.W", (D, V)), ("head.b", (V,)),
    ]
    return spec


def parameter_count(cfg: ModelConfig) -> int:
    """Closed form; must equal the sum of tensor sizes in parameter_spec."""
    D, V, N = cfg.embed_dim, cfg.patch_vector_len, cfg.num_patches
    return (2 * (V * D + D) + N * D + 3 * D
            + cfg.depth * (12 * D * D + 13 * D)
            + 2 * D + D * V + V)


@dataclass
class Model:
    """Config plus named parameter tensors (float32 unless cast for tests)."""

    cfg: ModelConfig
    params: dict

    def astype(self, dtype) -> "Model":
        return Model(self.cfg, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Model":
        return Model(self.cfg, {k: v.copy() for k, v in self.params.items()})

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params.values())


def init_model(cfg: ModelConfig) -> Model:
    """Deterministic initialization from cfg.seed.

    Weight scales are small enough that a fresh model's outputs stay well
    inside (-1, 1) in normalized pixel space; the head gets an extra 1/sqrt(D)
    shrink so early predictions hover near zero without being exactly zero
    (exact zeros would stall the finite-difference checks).
    """
    rng = Rng(cfg.seed)
    D = cfg.embed_dim
    head_std = 0.02 / np.sqrt(D)
    params = {}
    for name, shape in parameter_spec(cfg):
        if name.endswith(".g"):
            # norm gains start just under one so every tensor sits strictly
            # inside the unit ball at init
            params[name] = np.full(shape, 0.99, dtype=np.float32)
        elif name.endswith(".b") and not name.startswith("token"):
            params[name] = np.zeros(shape, dtype=np.float32)
        elif name.startswith("head."):
            params[name] = rng.normal(0.0, head_std, size=shape).astype(np.float32)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
    return Model(cfg, params)


# ---------------------------------------------------------------------------
# occlusion plans


@dataclass(frozen=True)
class OcclusionPlan:
    """Which target patches are hidden behind the placeholder token."""

    indices: frozenset
    mask_ratio: float

    def __post_init__(self):
        object.__setattr__(self, "indices", frozenset(int(i) for i in self.indices))

    def bool_mask(self, num_patches: int) -> np.ndarray:
        m = np.zeros(num_patches, dtype=bool)
        m[list(self.indices)] = True
        return m


def inference_plan(cfg: ModelConfig) -> OcclusionPlan:
    """Occlude exactly the query (bottom) half."""
    idx = cfg.query_patch_indices
    return OcclusionPlan(indices=frozenset(int(i) for i in idx), mask_ratio=0.5)


def random_plan(cfg: ModelConfig, rng: Rng, ratio_range=(0.4, 0.9)) -> OcclusionPlan:
    """Hide a uniform-random subset of all target patches at a sampled ratio."""
    ratio = float(rng.uniform(*ratio_range))
    n = cfg.num_patches
    count = max(1, int(round(ratio * n)))
    idx = rng.choice(n, size=count, replace=False)
    return OcclusionPlan(indices=frozenset(int(i) for i in idx), mask_ratio=ratio)


# ---------------------------------------------------------------------------
# patchify helpers


def patchify(canvas: np.ndarray, patch: int) -> np.ndarray:
    """(H, W, 3) -> (N, 3*patch^2), patches row-major."""
    H, W, _ = canvas.shape
    rows, cols = H // patch, W // patch
    x = canvas.reshape(rows, patch, cols, patch, 3)
    return x.transpose(0, 2, 1, 3, 4).reshape(rows * cols, -1)


def unpatchify(tokens: np.ndarray, patch: int, height: int, width: int) -> np.ndarray:
    rows, cols = height // patch, width // patch
    x = tokens.reshape(rows, cols, patch, patch, 3)
    return x.transpose(0, 2, 1, 3, 4).reshape(height, width, 3)


def _check_canvas(cfg: ModelConfig, canvas: ImageBuffer, what: str):
    if (canvas.height, canvas.width) != (2 * cfg.canvas_side, cfg.canvas_side):
        raise ShapeMismatch(
            f"{what} must be {2 * cfg.canvas_side}x{cfg.canvas_side}, "
            f"got {canvas.height}x{canvas.width}"
        )


_KIND_TOKEN = {PromptKind.FULL_MASK: "token.seg", PromptKind.SCRIBBLE: "token.scribble"}


# ---------------------------------------------------------------------------
# forward / backward


def _forward_batch(model: Model, inputs: np.ndarray, targets: np.ndarray,
                   occluded: np.ndarray, kinds: list, want_cache: bool = False):
    """inputs/targets: (B, N, V) normalized patches; occluded: (B, N) bool."""
    cfg, p = model.cfg, model.params
    tok_in = inputs @ p["embed.input.W"] + p["embed.input.b"]
    tok_tgt = targets @ p["embed.target.W"] + p["embed.target.b"]
    occ = occluded[:, :, None]
    tok_tgt = np.where(occ, p["token.mask"], tok_tgt)
    kind_rows = np.stack([p[_KIND_TOKEN[k]] for k in kinds])  # (B, D)
    x = tok_in + tok_tgt + p["pos"][None, :, :] + kind_rows[:, None, :]
    caches = []
    for i in range(cfg.depth):
        x, cache = nn.block_fwd(x, p, f"block{i}", cfg.heads)
        caches.append(cache)
    xn, c_norm = nn.layernorm_fwd(x, p["norm.g"], p["norm.b"])
    pred, _ = nn.linear_fwd(xn, p["head.W"], p["head.b"])
    if not want_cache:
        return pred, None
    return pred, (inputs, targets, occ, kinds, caches, c_norm, xn)


def _backward_batch(model: Model, dpred: np.ndarray, cache):
    cfg, p = model.cfg, model.params
    inputs, targets, occ, kinds, caches, c_norm, xn = cache
    grads = {}
    dxn, grads["head.W"], grads["head.b"] = nn.linear_bwd(dpred, xn, p["head.W"])
    dx, grads["norm.g"], grads["norm.b"] = nn.layernorm_bwd(dxn, c_norm, p["norm.g"])
    for i in reversed(range(cfg.depth)):
        dx, block_grads = nn.block_bwd(dx, caches[i], p, f"block{i}", cfg.heads)
        grads.update(block_grads)
    # dx is the gradient at the summed token embedding.
    B = dx.shape[0]
    grads["pos"] = dx.sum(axis=0)
    kind_grad = dx.sum(axis=1)  # (B, D)
    for key in ("token.seg", "token.scribble"):
        grads[key] = np.zeros_like(p[key])
    for b, kind in enumerate(kinds):
        grads[_KIND_TOKEN[kind]] += kind_grad[b]
    d_tok_tgt = np.where(occ, 0.0, dx)
    grads["token.mask"] = (dx * occ).reshape(-1, dx.shape[-1]).sum(axis=0)
    x2 = inputs.reshape(-1, inputs.shape[-1])
    t2 = targets.reshape(-1, targets.shape[-1])
    dx2 = dx.reshape(-1, dx.shape[-1])
    dt2 = d_tok_tgt.reshape(-1, dx.shape[-1])
    grads["embed.input.W"] = x2.T @ dx2
    grads["embed.input.b"] = dx2.sum(axis=0)
    grads["embed.target.W"] = t2.T @ dt2
    grads["embed.target.b"] = dt2.sum(axis=0)
    return grads


def forward(model: Model, input_canvas: ImageBuffer, target_canvas: ImageBuffer,
            plan: OcclusionPlan, prompt_kind: PromptKind) -> np.ndarray:
    """Run one canvas pair through the network.

    Returns the predicted target canvas as a float array of shape
    (2*canvas_side, canvas_side, 3) in normalized pixel space. Pixels inside
    occluded patches are genuine reconstructions; the rest are still
    predicted but carry no training signal.
    """
    cfg = model.cfg
    _check_canvas(cfg, input_canvas, "input canvas")
    _check_canvas(cfg, target_canvas, "target canvas")
    dtype = model.dtype
    inp = patchify(input_canvas.pixels.astype(dtype) / 255.0, cfg.patch_size)[None]
    tgt = patchify(target_canvas.pixels.astype(dtype) / 255.0, cfg.patch_size)[None]
    occ = plan.bool_mask(cfg.num_patches)[None]
    pred, _ = _forward_batch(model, inp, tgt, occ, [prompt_kind])
    return unpatchify(pred[0], cfg.patch_size, 2 * cfg.canvas_side, cfg.canvas_side)


def loss(pred: np.ndarray, target: np.ndarray, plan: OcclusionPlan,
         patch_size: int) -> float:
    """Mean absolute error over the pixels of occluded patches only."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    if not plan.indices:
        raise EmptyOcclusion("occlusion plan is empty")
    H, W, _ = pred.shape
    mask = _pixel_mask(plan, patch_size, H, W)
    diff = np.abs(pred - target)
    return float(diff[mask].mean())


def _pixel_mask(plan: OcclusionPlan, patch: int, height: int, width: int) -> np.ndarray:
    cols = width // patch
    mask = np.zeros((height // patch, cols), dtype=bool)
    for idx in plan.indices:
        mask[idx // cols, idx % cols] = True
    return np.kron(mask, np.ones((patch, patch), dtype=bool))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.1
    momentum: float = 0.9


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, model: Model) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in model.params.items()})


def encode_batch(cfg: ModelConfig, examples, plans, dtype=np.float32):
    """Pack train examples and plans into the arrays the network consumes."""
    if len(examples) != len(plans) or not examples:
        raise ShapeMismatch("need equally many examples and plans, at least one")
    inputs, targets, occs, kinds = [], [], [], []
    for ex, plan in zip(examples, plans):
        _check_canvas(cfg, ex.input_canvas, "input canvas")
        _check_canvas(cfg, ex.target_canvas, "target canvas")
        inputs.append(patchify(ex.input_canvas.pixels.astype(dtype) / 255.0, cfg.patch_size))
        targets.append(patchify(ex.target_canvas.pixels.astype(dtype) / 255.0, cfg.patch_size))
        occs.append(plan.bool_mask(cfg.num_patches))
        kinds.append(ex.prompt_kind)
    return np.stack(inputs), np.stack(targets), np.stack(occs), kinds


def batch_loss_and_grads(model: Model, examples, plans):
    """Mean per-example masked MAE and exact parameter gradients."""
    cfg = model.cfg
    dtype = model.dtype
    inputs, targets, occs, kinds = encode_batch(cfg, examples, plans, dtype=dtype)
    for plan in plans:
        if not plan.indices:
            raise EmptyOcclusion("occlusion plan is empty")
    pred, cache = _forward_batch(model, inputs, targets, occs, kinds, want_cache=True)
    B, N, V = pred.shape
    occ_pix = occs[:, :, None] & np.ones(V, dtype=bool)
    diff = pred - targets
    counts = occ_pix.sum(axis=(1, 2))  # occluded pixel count per example
    per_example = np.abs(np.where(occ_pix, diff, 0.0)).sum(axis=(1, 2)) / counts
    total = float(per_example.mean())
    dpred = np.sign(diff) * occ_pix / counts[:, None, None] / B
    grads = _backward_batch(model, dpred.astype(dtype), cache)
    return total, grads


def train_step(model: Model, examples, plans, state: OptimizerState,
               hyper: TrainHyper = TrainHyper()):
    """One SGD-with-momentum step on the mean batch loss.

    Returns (updated model, updated optimizer state, stats); stats report the
    loss before the step. Raises Diverged (carrying the stats) if the loss or
    any gradient goes non-finite.
    """
    loss_value, grads = batch_loss_and_grads(model, examples, plans)
    stats = {"loss": loss_value, "lr": hyper.lr, "batch": len(examples)}
    if not np.isfinite(loss_value):
        raise Diverged("non-finite loss", stats=stats)
    new_params, new_vel = {}, {}
    for name, value in model.params.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise Diverged(f"non-finite gradient in {name}", stats=stats)
        v = hyper.momentum * state.velocity[name] + g
        new_vel[name] = v.astype(value.dtype)
        new_params[name] = (value - hyper.lr * v).astype(value.dtype)
    return Model(model.cfg, new_params), OptimizerState(new_vel), stats


# ---------------------------------------------------------------------------
# inference


def infer(model: Model, ref: tuple, query_image: ImageBuffer,
          prompt_kind: PromptKind, palette: ColorPalette,
          tol: float | None = None) -> ClassMask:
    """Auto-label one query image from a reference image/annotation pair.

    The query target is fully occluded, the network reconstructs it, and the
    bottom half of the prediction is decoded back to class ids through the
    palette. Decoding defaults to pure nearest-color (tol=None): predictions
    are soft, so the storage rejection band would wrongly drop boundary
    pixels to background.
    """
    ref_image, ref_annotation = ref
    cfg = model.cfg
    side = cfg.canvas_side
    for im, what in ((ref_image, "reference image"),
                     (ref_annotation, "reference annotation"),
                     (query_image, "query image")):
        if (im.height, im.width) != (side, side):
            raise ShapeMismatch(f"{what} must be {side}x{side}")
    input_canvas = ref_image.vstack(query_image)
    target_canvas = ref_annotation.vstack(ImageBuffer.filled(side, side))
    pred = forward(model, input_canvas, target_canvas, inference_plan(cfg), prompt_kind)
    bottom = pred[side:]
    rendered = ImageBuffer(np.clip(np.rint(bottom * 255.0), 0, 255).astype(np.uint8))
    return decode_mask(rendered, palette, tol=tol)


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout: b"SGLB" | u32 LE header length | header JSON (UTF-8) | payload.
# The header records the format version, the config, and the tensor table
# (name + shape in serialization order); the payload is each tensor's
# float32 little-endian bytes, concatenated in table order.


def save_checkpoint(model: Model) -> bytes:
    header = {
        "format": "seglabel-checkpoint",
        "version": _CKPT_VERSION,
        "config": model.cfg.to_jsonable(),
        "tensors": [{"name": n, "shape": list(s)} for n, s in parameter_spec(model.cfg)],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    for name, _ in parameter_spec(model.cfg):
        buf.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())
    return buf.getvalue()


def load_checkpoint(data: bytes) -> Model:
    if len(data) < 8 or data[:4] != _MAGIC:
        raise CorruptCheckpoint("bad magic")
    (head_len,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + head_len:
        raise CorruptCheckpoint("truncated header")
    try:
        header = json.loads(data[8:8 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"unparseable header: {e}") from e
    if header.get("format") != "seglabel-checkpoint" or header.get("version") != _CKPT_VERSION:
        raise CorruptCheckpoint("unknown format or version")
    try:
        cfg = ModelConfig.from_jsonable(header["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptCheckpoint(f"bad config: {e}") from e
    expected = [{"name": n, "shape": list(s)} for n, s in parameter_spec(cfg)]
    if header.get("tensors") != expected:
        raise CorruptCheckpoint("tensor table does not match config")
    payload = data[8 + head_len:]
    if len(payload) != 4 * parameter_count(cfg):
        raise CorruptCheckpoint(
            f"payload length {len(payload)} != {4 * parameter_count(cfg)}"
        )
    params = {}
    offset = 0
    for name, shape in parameter_spec(cfg):
        size = int(np.prod(shape)) * 4
        arr = np.frombuffer(payload[offset:offset + size], dtype="<f4").reshape(shape)
        params[name] = arr.astype(np.float32)
        offset += size
    return Model(cfg, params)


def save_checkpoint_file(model: Model, path) -> None:
    from pathlib import Path

    Path(path).write_bytes(save_checkpoint(model))


def load_checkpoint_file(path) -> Model:
    from pathlib import Path

    return load_checkpoint(Path(path).read_bytes())
