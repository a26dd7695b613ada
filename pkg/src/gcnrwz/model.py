"""Model assembly: fusion + two spatio-temporal blocks + recurrent head,
with a named parameter registry and a binary checkpoint format.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import graph as graphmod
from . import layers
from .autodiff import Tensor
from .features import FUSION_VARIANTS

CHECKPOINT_MAGIC = b"GCNRWZ01"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    history: int = 12  # H, input steps (5 min each)
    horizon: int = 3  # P, forecast steps
    heads: int = 4
    channels: int = 8  # hidden channels per block
    k_t: int = 3  # temporal kernel length
    blocks: int = 2
    spatial_mode: str = "linear"  # "linear" | "chebyshev"
    cheb_k: int = 2
    kernel_lambda: float = 3.0
    fusion_variant: str = "learned-both"
    include_construction: bool = True
    spatial_activation: str = "relu"
    d_hidden: int = 8  # recurrent hidden width
    lambda_max: object = "auto"  # float or "auto"
    seed: int = 0

    def validate(self):
        min_h = self.blocks * (self.k_t - 1) + 1
        if self.history < min_h:
            raise ValueError(f"history {self.history} too short for {self.blocks} "
                             f"blocks of kernel {self.k_t}; minimum is {min_h}")
        for name in ("horizon", "heads", "channels", "k_t", "blocks", "d_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.spatial_mode not in ("linear", "chebyshev"):
            raise ValueError(f"unknown spatial mode: {self.spatial_mode!r}")
        if self.fusion_variant not in FUSION_VARIANTS:
            raise ValueError(f"unknown fusion variant: {self.fusion_variant!r}")
        if self.kernel_lambda <= 0:
            raise ValueError("kernel lambda must be positive")

    def block_shapes(self, n_nodes):
        """Per-block (c_in, c_out, t_in) following the valid-conv shrinkage."""
        shapes = []
        c_in, t = 1, self.history
        for _ in range(self.blocks):
            shapes.append((c_in, self.channels, t))
            c_in = self.channels
            t = t - (self.k_t - 1)
        return shapes


@dataclass
class GcnRwzModel:
    config: ModelConfig
    graph: graphmod.RoadGraph
    registry: dict  # name -> Tensor, insertion-ordered
    fusion_w_s: Tensor | None
    fusion_w_c: Tensor | None
    blocks: list  # layers.StBlockParams
    head: layers.OutputHeadParams

    def parameters(self):
        return list(self.registry.values())

    def zero_grad(self):
        for t in self.registry.values():
            t.grad = None

    def parameter_count(self):
        return sum(t.values.size for t in self.registry.values())


def init_model(config, graph, seed=None):
    """Deterministically initialize all parameters from the seed."""
    config.validate()
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    n = graph.n
    ops = graphmod.spectral_operators(graph, config.lambda_max)
    operator = (ops.normalized_adjacency if config.spatial_mode == "linear"
                else ops.scaled_laplacian)

    registry = {}

    def register(name, tensor):
        registry[name] = tensor
        return tensor

    def register_attention(prefix, p):
        for h in range(p.heads):
            register(f"{prefix}.head{h}.wq", p.wq[h])
            register(f"{prefix}.head{h}.wk", p.wk[h])
            register(f"{prefix}.head{h}.wv", p.wv[h])
        register(f"{prefix}.wo", p.wo)

    fusion_w_s = None
    fusion_w_c = None
    if config.fusion_variant == "learned-both":
        fusion_w_s = register("fusion.w_s", Tensor(np.ones(n), requires_grad=True))
    if config.include_construction:
        fusion_w_c = register("fusion.w_c", Tensor(np.zeros(n), requires_grad=True))

    blocks = []
    for b, (c_in, c_out, t_in) in enumerate(config.block_shapes(n)):
        for d_model, what in ((c_in * t_in, "spatial"), (c_in * n, "temporal")):
            if d_model % config.heads != 0:
                raise ValueError(
                    f"block {b} {what} attention width {d_model} is not "
                    f"divisible by heads = {config.heads}")
        sp_att = layers.init_attention(rng, c_in * t_in, config.heads)
        t_att = layers.init_attention(rng, c_in * n, config.heads)
        sconv = layers.init_spatial_conv(rng, c_in, c_out, operator,
                                         mode=config.spatial_mode,
                                         cheb_k=config.cheb_k,
                                         activation=config.spatial_activation)
        tconv = layers.init_temporal_conv(rng, c_out, c_out, config.k_t)
        res = layers.glorot_uniform(rng, c_in, c_out) if c_in != c_out else None
        register_attention(f"block{b}.spatial_att", sp_att)
        register_attention(f"block{b}.temporal_att", t_att)
        for k, theta in enumerate(sconv.thetas):
            register(f"block{b}.spatial_conv.theta{k}", theta)
        register(f"block{b}.temporal_conv.kernel", tconv.kernel)
        register(f"block{b}.temporal_conv.bias", tconv.bias)
        if res is not None:
            register(f"block{b}.residual_proj", res)
        blocks.append(layers.StBlockParams(sp_att, t_att, sconv, tconv, res))

    channel_proj = layers.glorot_uniform(rng, config.channels, 1)
    channel_bias = Tensor(np.zeros(1), requires_grad=True)
    recurrent = layers.init_bi_recurrent(rng, 1, config.d_hidden)
    w_out = layers.glorot_uniform(rng, 2 * config.d_hidden, config.horizon)
    b_out = Tensor(np.zeros(config.horizon), requires_grad=True)
    head = layers.OutputHeadParams(channel_proj, channel_bias, recurrent, w_out, b_out)
    register("head.channel_proj", channel_proj)
    register("head.channel_bias", channel_bias)
    for direction, cell in (("fwd", recurrent.forward), ("bwd", recurrent.backward)):
        for gate in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"):
            register(f"head.{direction}.{gate}", getattr(cell, gate))
    register("head.w_out", w_out)
    register("head.b_out", b_out)

    return GcnRwzModel(config, graph, registry, fusion_w_s, fusion_w_c, blocks, head)


def _fused_channel(model, inputs):
    """Apply the speed-wave fusion inside the tape so W_s/W_c get gradients."""
    cfg = model.config
    s, c, n, h = inputs.shape
    x = ad.constant(inputs)
    speed = ad.reshape(ad.slice_axis(x, 1, 0, 1), (s, n, h))
    cons = None
    if cfg.include_construction:
        cons = ad.reshape(ad.slice_axis(x, 1, 1, 1), (s, n, h))

    def broadcast(w):
        return ad.reshape(w, (1, n, 1))

    if cfg.fusion_variant == "learned-both":
        fused = ad.hadamard(broadcast(model.fusion_w_s), speed)
        if cons is not None:
            fused = ad.add(fused, ad.hadamard(broadcast(model.fusion_w_c), cons))
    elif cfg.fusion_variant == "learned-c-only":
        fused = speed
        if cons is not None:
            fused = ad.add(fused, ad.hadamard(broadcast(model.fusion_w_c), cons))
    else:  # degenerate: X^s (.) X^s + W_c
        fused = ad.hadamard(speed, speed)
        if cons is not None:
            fused = ad.add(fused, broadcast(model.fusion_w_c))
    return ad.reshape(fused, (s, 1, n, h))


def forward(model, batch_inputs):
    """Forecast (S, N, P) from a batch of (S, C, N, H) windows."""
    inputs = np.asarray(batch_inputs, dtype=np.float64)
    if inputs.ndim != 4:
        raise ValueError(f"expected 4-d batch (S, C, N, H), got shape {inputs.shape}")
    cfg = model.config
    expected_c = 2 if cfg.include_construction else 1
    if inputs.shape[1] != expected_c:
        raise ValueError(f"channel axis has size {inputs.shape[1]}, "
                         f"expected {expected_c}")
    if inputs.shape[2] != model.graph.n:
        raise ValueError(f"node axis has size {inputs.shape[2]}, "
                         f"expected {model.graph.n}")
    if inputs.shape[3] != cfg.history:
        raise ValueError(f"time axis has size {inputs.shape[3]}, "
                         f"expected H = {cfg.history}")

    h = _fused_channel(model, inputs)
    for block in model.blocks:
        h = layers.st_block(h, block)
    return layers.output_head(h, model.head)


def predict(model, batch_inputs):
    """Forward pass returning a plain array (no tape kept)."""
    return forward(model, batch_inputs).values


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_checkpoint(model, extras=None):
    """Serialize to bytes: magic, length-prefixed JSON header, float64 blobs,
    trailing CRC32 of everything prior."""
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in model.registry.items():
        if not np.all(np.isfinite(tensor.values)):
            raise ValueError(f"parameter {name!r} contains non-finite values")
        raw = np.ascontiguousarray(tensor.values, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "segment_ids": list(model.graph.segment_ids),
        "manifest": manifest,
        "extras": extras or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = CHECKPOINT_MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes
    body += b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def load_checkpoint(data, graph):
    """Rebuild a model from checkpoint bytes; returns (model, extras)."""
    if len(data) < len(CHECKPOINT_MAGIC) + 8:
        raise ValueError("checkpoint truncated")
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError("bad checkpoint magic bytes")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ValueError("checkpoint CRC mismatch")
    pos = len(CHECKPOINT_MAGIC)
    header_len = struct.unpack("<I", data[pos:pos + 4])[0]
    pos += 4
    header = json.loads(data[pos:pos + header_len].decode("utf-8"))
    pos += header_len
    if header["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['format_version']}")
    if list(graph.segment_ids) != header["segment_ids"]:
        raise ValueError("checkpoint was built for a different segment roster")

    config = ModelConfig(**header["config"])
    model = init_model(config, graph)

    stored = {entry["name"]: entry for entry in header["manifest"]}
    expected = set(model.registry)
    missing = expected - set(stored)
    extra = set(stored) - expected
    if missing or extra:
        raise ValueError(f"checkpoint parameter manifest mismatch: "
                         f"missing {sorted(missing)}, unexpected {sorted(extra)}")
    payload = data[pos:-4]
    for name, tensor in model.registry.items():
        entry = stored[name]
        if tuple(entry["shape"]) != tensor.shape:
            raise ValueError(f"parameter {name!r} shape {entry['shape']} does not "
                             f"match expected {list(tensor.shape)}")
        nbytes = tensor.values.size * 8
        raw = payload[entry["offset"]:entry["offset"] + nbytes]
        if len(raw) != nbytes:
            raise ValueError(f"checkpoint truncated in parameter {name!r}")
        tensor.values = np.frombuffer(raw, dtype="<f8").reshape(tensor.shape).copy()
    return model, header["extras"]
