"""Conditional U-Net noise predictor and its checkpoint container.

Topology (latent resolution ``s``)::

    conv_in -> enc0 (s) -> down -> enc1 (s/2) -> down -> enc2 (s/4) -> mid (s/4)
    -> dec2 (s/4) -> up -> dec1 (s/2) -> up -> dec0 (s) -> conv_out

Decoder blocks take the upsampled path concatenated with the matching
encoder output.  An LFM block can follow any of the seven main blocks.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .lfm import LFM, ROUTER_VARIANTS, lfm_flops, lfm_parameter_count
from .nn import Conv2d, Linear, Module
from .rng import stream
from .schedule import NoiseSchedule, build_schedule
from .tensor import ShapeError, Tensor

BLOCKS = ("enc0", "enc1", "enc2", "mid", "dec2", "dec1", "dec0")
PLACEMENTS = {
    "none": (),
    "encoder-early": ("enc0",),
    "middle": ("mid",),
    "decoder-early": ("dec2",),
    "decoder-penultimate": ("dec1",),
    "decoder-final": ("dec0",),
    "all-blocks": BLOCKS,
}
OUTPUTS = ("eps", "v")


@dataclass
class UNetConfig:
    latent_channels: int = 48
    latent_size: int = 16
    base_channels: int = 32
    channel_mults: tuple = (1, 2, 2)
    temb_dim: int = 64
    placement: str = "decoder-penultimate"
    router: str = "LE+SA+PM"
    n_masks: int = 4
    learnable_bank: bool = True
    heads: int = 4
    output: str = "v"

    def __post_init__(self):
        self.channel_mults = tuple(self.channel_mults)
        if self.placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}; choose from {sorted(PLACEMENTS)}")
        if self.router not in ROUTER_VARIANTS:
            raise ValueError(f"unknown router {self.router!r}")
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output {self.output!r}; choose from {OUTPUTS}")
        if len(self.channel_mults) != 3:
            raise ValueError("channel_mults must have three entries")
        if self.latent_size % 4:
            raise ValueError("latent_size must be divisible by 4")

    def block_geometry(self) -> dict[str, tuple[int, int]]:
        """(channels, spatial size) at each main block output."""
        c0, c1, c2 = (self.base_channels * m for m in self.channel_mults)
        s = self.latent_size
        return {"enc0": (c0, s), "enc1": (c1, s // 2), "enc2": (c2, s // 4), "mid": (c2, s // 4),
                "dec2": (c2, s // 4), "dec1": (c1, s // 2), "dec0": (c0, s)}


def timestep_embedding(t, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal embedding ``(B, dim)``: sin half then cos half."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(dtype)


def adapt_input_layer(weight: np.ndarray) -> np.ndarray:
    """Duplicate conv weights along the input-channel axis and halve them.

    Applying the result to ``concat(u, u)`` reproduces the original layer on ``u``.
    """
    weight = np.asarray(weight)
    return np.concatenate([weight, weight], axis=1) * weight.dtype.type(0.5)


class Block(Module):
    """Pre-activation residual block; the second conv starts at zero so the block is an identity map."""

    def __init__(self, rng, cin: int, cout: int, temb_dim: int, dtype):
        self.conv1 = Conv2d(rng, cin, cout, 3, dtype=dtype)
        self.temb = Linear(rng, temb_dim, cout, dtype=dtype)
        self.conv2 = Conv2d(rng, cout, cout, 3, dtype=dtype, zero=True)
        self.skip = Conv2d(rng, cin, cout, 1, dtype=dtype) if cin != cout else None

    def __call__(self, x: Tensor, emb: Tensor) -> Tensor:
        B = x.shape[0]
        h = self.conv1(T.silu(x)) + T.reshape(self.temb(emb), (B, -1, 1, 1))
        h = self.conv2(T.silu(h))
        return (self.skip(x) if self.skip is not None else x) + h


class UNet(Module):
    """``schedule`` is only consulted when ``cfg.output == "v"``."""

    def __init__(self, cfg: UNetConfig, seed: int = 0, dtype=np.float32,
                 schedule: NoiseSchedule | None = None):
        self.cfg = cfg
        self.alpha_bar = (schedule or build_schedule()).alpha_bar
        rng = stream(seed, "init")
        c0, c1, c2 = (cfg.base_channels * m for m in cfg.channel_mults)
        cl, td = cfg.latent_channels, cfg.temb_dim
        # single-latent input layer, widened for (image, depth) concatenation
        conv_in = Conv2d(rng, cl, c0, 3, dtype=dtype)
        conv_in.weight = Tensor(adapt_input_layer(conv_in.weight.data), requires_grad=True)
        self.conv_in = conv_in
        self.enc0 = Block(rng, c0, c0, td, dtype)
        self.down0 = Conv2d(rng, c0, c1, 3, stride=2, dtype=dtype)
        self.enc1 = Block(rng, c1, c1, td, dtype)
        self.down1 = Conv2d(rng, c1, c2, 3, stride=2, dtype=dtype)
        self.enc2 = Block(rng, c2, c2, td, dtype)
        self.mid = Block(rng, c2, c2, td, dtype)
        self.dec2 = Block(rng, c2 + c2, c2, td, dtype)
        self.dec1 = Block(rng, c2 + c1, c1, td, dtype)
        self.dec0 = Block(rng, c1 + c0, c0, td, dtype)
        self.conv_out = Conv2d(rng, c0, cl, 3, dtype=dtype)
        lrng = stream(seed, "init-lfm")
        geom = cfg.block_geometry()
        self.lfm = {}
        for name in PLACEMENTS[cfg.placement]:
            ch, s = geom[name]
            self.lfm[name] = LFM(lrng, ch, s, s, cfg.n_masks, cfg.router,
                                 learnable_bank=cfg.learnable_bank, dtype=dtype)

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
        for name in BLOCKS:
            if name in self.lfm:
                yield from self.lfm[name].named_parameters(f"{prefix}lfm.{name}.")

    def _post(self, name: str, x: Tensor) -> Tensor:
        block = self.lfm.get(name)
        return block(x) if block is not None else x

    def __call__(self, z_t, z_x, t) -> Tensor:
        return predict_noise(self, z_t, z_x, t)


def predict_noise(model: UNet, z_t, z_x, t) -> Tensor:
    """Noise estimate for ``z_t`` conditioned on the image latent ``z_x`` at step ``t``."""
    z_t = T.as_tensor(z_t)
    z_x = T.as_tensor(z_x)
    cfg = model.cfg
    if z_t.ndim == 3:
        return T.reshape(predict_noise(model, T.reshape(z_t, (1,) + z_t.shape),
                                       T.reshape(z_x, (1,) + z_x.shape), t), z_t.shape)
    if z_t.shape[0] != z_x.shape[0] or z_t.shape[2:] != z_x.shape[2:]:
        raise ShapeError(f"noisy latent {z_t.shape} and image latent {z_x.shape} disagree")
    if z_t.shape[1] != cfg.latent_channels or z_x.shape[1] != cfg.latent_channels:
        raise ShapeError(f"expected {cfg.latent_channels} latent channels")
    B = z_t.shape[0]
    dtype = model.conv_in.weight.dtype
    t = np.broadcast_to(np.asarray(t), (B,))
    emb = Tensor(timestep_embedding(t, cfg.temb_dim, dtype))

    def cast(a: Tensor) -> Tensor:
        return a if a.dtype == dtype else Tensor(a.data.astype(dtype))

    x = T.concat([cast(z_x), cast(z_t)], axis=1)
    h = model.conv_in(x)
    e0 = model._post("enc0", model.enc0(h, emb))
    e1 = model._post("enc1", model.enc1(model.down0(e0), emb))
    e2 = model._post("enc2", model.enc2(model.down1(e1), emb))
    m = model._post("mid", model.mid(e2, emb))
    d = model._post("dec2", model.dec2(T.concat([m, e2], axis=1), emb))
    d = T.upsample_nearest2d(d, 2)
    d = model._post("dec1", model.dec1(T.concat([d, e1], axis=1), emb))
    d = T.upsample_nearest2d(d, 2)
    d = model._post("dec0", model.dec0(T.concat([d, e0], axis=1), emb))
    out = model.conv_out(T.silu(d))
    if cfg.output == "eps":
        return out
    # the trunk predicts v = sqrt(ab) eps - sqrt(1 - ab) z0; rewrite it as a noise estimate
    ab = model.alpha_bar[t].astype(dtype).reshape(B, 1, 1, 1)
    return out * Tensor(np.sqrt(ab)) + cast(z_t) * Tensor(np.sqrt(1 - ab))


def lfm_cost(cfg: UNetConfig) -> dict[str, float]:
    """Analytic parameter and FLOP cost of the LFM blocks implied by ``cfg``."""
    geom = cfg.block_geometry()
    params = flops = 0.0
    for name in PLACEMENTS[cfg.placement]:
        ch, s = geom[name]
        params += lfm_parameter_count(ch, s, s, cfg.n_masks, cfg.router)
        flops += lfm_flops(ch, s, s, cfg.n_masks, cfg.router)
    return {"params": params, "flops": flops, "blocks": len(PLACEMENTS[cfg.placement])}


# ---------------------------------------------------------------------------
# checkpoints: <stem>.bin (raw little-endian float32) + <stem>.manifest (text)
# ---------------------------------------------------------------------------

CKPT_MAGIC = "lfmdepth-checkpoint 1"


class CheckpointError(ValueError):
    pass


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict | None = None,
                    meta: dict | None = None) -> None:
    """Write ``path + '.bin'`` and ``path + '.manifest'``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks, lines, offset = [], [CKPT_MAGIC], 0
    lines.append("config " + json.dumps(config or {}, sort_keys=True))
    lines.append("meta " + json.dumps(meta or {}, sort_keys=True))
    for name, arr in tensors.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name contains whitespace: {name!r}")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        shape = "x".join(str(n) for n in np.shape(arr)) or "scalar"
        lines.append(f"tensor {name} {shape} {offset} {len(raw)}")
        chunks.append(raw)
        offset += len(raw)
    _atomic_write(path.with_suffix(".bin"), b"".join(chunks))
    _atomic_write(path.with_suffix(".manifest"), ("\n".join(lines) + "\n").encode("utf-8"))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    path = Path(path)
    man = path.with_suffix(".manifest")
    binp = path.with_suffix(".bin")
    if not man.exists() or not binp.exists():
        raise FileNotFoundError(f"checkpoint {path} (.manifest/.bin) not found")
    lines = man.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CKPT_MAGIC:
        raise CheckpointError(f"{man}: bad header")
    blob = binp.read_bytes()
    tensors, config, meta = {}, {}, {}
    for line in lines[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            config = json.loads(rest)
        elif kind == "meta":
            meta = json.loads(rest)
        elif kind == "tensor":
            name, shape, off, size = rest.split(" ")
            off, size = int(off), int(size)
            if off + size > len(blob):
                raise CheckpointError(f"{binp}: tensor {name} runs past end of file")
            dims = () if shape == "scalar" else tuple(int(n) for n in shape.split("x"))
            tensors[name] = np.frombuffer(blob, dtype="<f4", count=size // 4,
                                          offset=off).astype(np.float32).reshape(dims)
        elif line.strip():
            raise CheckpointError(f"{man}: unrecognised line {line!r}")
    return tensors, config, meta


def config_to_dict(cfg: UNetConfig) -> dict:
    d = asdict(cfg)
    d["channel_mults"] = list(cfg.channel_mults)
    return d
