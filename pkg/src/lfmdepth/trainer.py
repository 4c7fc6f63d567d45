"""Training loop, AdamW, checkpoint resume, model evaluation and ablation runs."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import biasmap, codec
from . import tensor as T
from .denoiser import UNet, UNetConfig, config_to_dict, load_checkpoint, predict_noise, save_checkpoint
from .evalkit import Aggregate, MetricReport, evaluate
from .loss import total_loss
from .normalize import DegenerateMapError, DepthMap, normalize
from .rng import stream
from .schedule import build_schedule, ensemble_infer, forward_noise
from .synthdata import Sample
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 4000
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    # components
    lfm_on: bool = True
    biasmap_on: bool = True
    w_dist_on: bool = True
    w_struct_on: bool = True
    var_loss_on: bool = True
    dist_pool: str = "avg"
    struct_pool: str = "max"
    lam: float = 1.0
    gamma: float = 5.0
    # model
    n_masks: int = 4
    placement: str = "decoder-penultimate"
    router: str = "LE+SA+PM"
    learnable_bank: bool = True
    base_channels: int = 32
    # diffusion
    r: int = 4
    T: int = 200
    shared_timestep: bool = True   # one t per step keeps mean(w_final) inside [<w>, 1]
    beta_start: float = 0.00425
    beta_end: float = 0.06
    schedule: str = "scaled-linear"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("steps, batch_size and lr must be positive")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        for pool in (self.dist_pool, self.struct_pool):
            if pool not in ("avg", "max"):
                raise ValueError(f"pooling must be 'avg' or 'max', got {pool!r}")

    def unet_config(self, image_size: int) -> UNetConfig:
        if image_size % self.r:
            raise ValueError(f"image size {image_size} not divisible by r={self.r}")
        return UNetConfig(latent_channels=self.r * self.r * 3, latent_size=image_size // self.r,
                          base_channels=self.base_channels,
                          placement=self.placement if self.lfm_on else "none",
                          router=self.router, n_masks=self.n_masks,
                          learnable_bank=self.learnable_bank)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise KeyError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class TrainingDiverged(RuntimeError):
    pass


class AdamW:
    """Adam with decoupled weight decay; state is keyed by parameter name."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01,
                 no_decay: tuple[str, ...] = ("tau",)):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.no_decay = no_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, named: list[tuple[str, Tensor]]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in named:
            g = p.grad
            if g is None:
                continue
            dt = p.dtype
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= dt.type(b1)
            m += dt.type(1 - b1) * g
            v *= dt.type(b2)
            v += dt.type(1 - b2) * (g * g)
            if self.weight_decay and name not in self.no_decay:
                p.data *= dt.type(1.0 - self.lr * self.weight_decay)
            denom = np.sqrt(v / dt.type(c2)) + dt.type(self.eps)
            p.data -= dt.type(self.lr / c1) * m / denom

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, tensors: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for key, arr in tensors.items():
            if key.startswith("adam.m."):
                self.m[key[7:]] = np.array(arr)
            elif key.startswith("adam.v."):
                self.v[key[7:]] = np.array(arr)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2))
                              for p in params if p.grad is not None)))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(scale)
    return total


@dataclass
class PreparedData:
    """Latents and pooled weight maps for a sample set, computed once."""

    z_x: np.ndarray       # (N, c, h, w) image latents
    z0: np.ndarray        # (N, c, h, w) depth latents
    w_dist: np.ndarray    # (N, h, w) pooled
    w_struct: np.ndarray  # (N, h, w) pooled

    def __len__(self) -> int:
        return len(self.z_x)


def normalized_depth(sample: Sample) -> np.ndarray:
    try:
        return normalize(sample.depth).values
    except DegenerateMapError:
        return np.zeros_like(sample.depth.values, dtype=np.float64)


def prepare(samples: list[Sample], cfg: TrainConfig, dtype=np.float32) -> PreparedData:
    dn = np.stack([normalized_depth(s) for s in samples])
    images = np.stack([s.image for s in samples])
    z_x = codec.encode(images, cfg.r).astype(dtype)
    z0 = codec.encode_depth(dn, cfg.r).astype(dtype)
    wd, ws = biasmap.latent_weight_maps(dn, cfg.r, use_dist=cfg.w_dist_on, use_struct=cfg.w_struct_on,
                                        dist_pool=cfg.dist_pool, struct_pool=cfg.struct_pool)
    return PreparedData(z_x, z0, wd, ws)


LOG_COLUMNS = ["step", "t", "L_latent", "L_var", "L_total", "eta", "w_final_mean",
               "w_final_absdev", "tau", "wall_time"]


class Trainer:
    def __init__(self, cfg: TrainConfig, image_size: int = 64, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.unet_cfg = cfg.unet_config(image_size)
        self.image_size = image_size
        self.sched = build_schedule(cfg.T, cfg.beta_start, cfg.beta_end, cfg.schedule)
        self.model = UNet(self.unet_cfg, seed=cfg.seed, dtype=dtype, schedule=self.sched)
        self.tau = Tensor(np.zeros((), dtype=dtype), requires_grad=cfg.biasmap_on, name="tau")
        self.opt = AdamW(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
        self.step = 0
        self.history: list[dict] = []

    # -- parameters --------------------------------------------------------
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = list(self.model.named_parameters())
        if self.cfg.biasmap_on:
            named.append(("tau", self.tau))
        return named

    # -- one optimisation step ---------------------------------------------
    def batch_indices(self, n: int, step: int) -> np.ndarray:
        rng = stream(self.cfg.seed, "data", step)
        return rng.choice(n, size=self.cfg.batch_size, replace=n < self.cfg.batch_size)

    def compute_loss(self, data: PreparedData, idx: np.ndarray, step: int, t=None):
        """Loss report plus diagnostics for the batch ``idx`` at ``step``; ``t`` overrides the drawn step."""
        cfg = self.cfg
        trng = stream(cfg.seed, "timesteps", step)
        if t is not None:
            t = np.asarray(t) if np.ndim(t) else int(t)
        elif cfg.shared_timestep:
            t = int(trng.integers(1, cfg.T + 1))
        else:
            t = trng.integers(1, cfg.T + 1, size=len(idx))
        z0 = data.z0[idx]
        eps = stream(cfg.seed, "noise", step).standard_normal(z0.shape).astype(self.dtype)
        z_t = forward_noise(z0, t, eps, self.sched).astype(self.dtype)
        eps_hat = predict_noise(self.model, z_t, data.z_x[idx], t)
        eta = float(np.mean(biasmap.ramp(t, self.sched, cfg.gamma)))
        w_final = None
        w_stats = (1.0, 0.0)
        if cfg.biasmap_on:
            w = biasmap.gate_and_normalize(data.w_dist[idx], data.w_struct[idx], self.tau)
            w_final = biasmap.temporal_modulate(w, t, self.sched, cfg.gamma)
            wf = w_final.data.astype(np.float64)
            w_stats = (float(wf.mean()), float(np.abs(wf - 1.0).mean()))
            w_final = T.reshape(w_final, (len(idx), 1) + w_final.shape[1:])
        lam = cfg.lam if cfg.var_loss_on else 0.0
        report = total_loss(eps_hat, eps, w_final, lam)
        return report, {"t": float(np.mean(t)), "eta": eta, "w_final_mean": w_stats[0], "w_final_absdev": w_stats[1]}

    def train_step(self, data: PreparedData, idx: np.ndarray | None = None) -> dict:
        step = self.step + 1
        if idx is None:
            idx = self.batch_indices(len(data), step)
        start = time.perf_counter()
        report, diag = self.compute_loss(data, idx, step)
        vals = report.values()
        if not all(np.isfinite(v) for v in vals.values()):
            raise TrainingDiverged(f"non-finite loss at step {step}, t={diag['t']}: {vals}")
        named = self.named_parameters()
        for _, p in named:
            p.grad = None
        T.backward(report.total)
        clip_grad_norm([p for _, p in named], self.cfg.grad_clip)
        self.opt.step(named)
        self.step = step
        row = {"step": step, **diag, **vals, "tau": float(self.tau.data),
               "wall_time": time.perf_counter() - start}
        self.history.append(row)
        return row

    def fit(self, data: PreparedData, steps: int | None = None, log_every: int = 50,
            checkpoint_every: int = 0, out_dir=None) -> list[dict]:
        steps = self.cfg.steps if steps is None else steps
        rows = []
        for _ in range(steps):
            row = self.train_step(data)
            rows.append(row)
            if log_every and row["step"] % log_every == 0:
                log.info("step %d  L_total %.4f  L_latent %.4f  L_var %.4f  t %d",
                         row["step"], row["L_total"], row["L_latent"], row["L_var"], row["t"])
            if checkpoint_every and out_dir and row["step"] % checkpoint_every == 0:
                self.save(Path(out_dir) / f"ckpt_{row['step']:06d}")
        return rows

    # -- persistence ---------------------------------------------------------
    def save(self, path) -> None:
        tensors = dict(self.model.state_dict())
        tensors["tau"] = self.tau.data
        tensors.update(self.opt.state())
        save_checkpoint(path, tensors,
                        config={"train": asdict(self.cfg), "unet": config_to_dict(self.unet_cfg),
                                "image_size": self.image_size},
                        meta={"step": self.step, "adam_t": self.opt.t})

    @classmethod
    def load(cls, path) -> "Trainer":
        tensors, config, meta = load_checkpoint(path)
        cfg = TrainConfig.from_dict(config["train"])
        trainer = cls(cfg, image_size=int(config.get("image_size", 64)))
        model_state = {k: v for k, v in tensors.items() if k != "tau" and not k.startswith("adam.")}
        trainer.model.load_state_dict(model_state)
        trainer.tau.data = np.array(tensors["tau"], dtype=trainer.dtype)
        trainer.opt.load_state({k: v for k, v in tensors.items() if k.startswith("adam.")},
                               int(meta.get("adam_t", 0)))
        trainer.step = int(meta.get("step", 0))
        return trainer

    # -- inference -------------------------------------------------------------
    def predictor(self):
        def predict(z_t, z_x, t):
            with T.no_grad():
                return predict_noise(self.model, z_t, z_x, t).data
        return predict

    def infer(self, images: np.ndarray, runs: int = 4, seed: int = 0, steps: int = 20,
              chunk: int = 16) -> np.ndarray:
        """Normalized depth ``(B, H, W)`` from images ``(B, 3, H, W)`` by ensemble DDIM."""
        z_x = codec.encode(np.asarray(images, dtype=self.dtype), self.cfg.r)
        outs = []
        for lo in range(0, len(z_x), chunk):
            outs.append(ensemble_infer(self.predictor(), z_x[lo:lo + chunk], self.sched,
                                       runs=runs, seeds=[seed + i for i in range(runs)],
                                       steps=steps, r=self.cfg.r))
        return np.concatenate(outs)


def evaluate_predictions(preds: np.ndarray, samples: list[Sample]) -> tuple[list[MetricReport], MetricReport]:
    agg = Aggregate()
    for i, (p, s) in enumerate(zip(preds, samples)):
        agg.add(evaluate(DepthMap(p, units="normalized"), s.depth, name=f"sample_{i:04d}"))
    return agg.reports, agg.summary()


def log_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LOG_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r)
    return buf.getvalue()


def smoothed(values, window: int = 25) -> np.ndarray:
    """Trailing moving average (shorter window at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

@dataclass
class AblationResult:
    config: str
    seed: int
    summary: MetricReport
    history: list[dict]


def run_ablation(configs: dict[str, TrainConfig], train: list[Sample], eval_set: list[Sample],
                 seeds: list[int], steps: int, runs: int = 2, ddim_steps: int = 10,
                 train_fn=None) -> list[AblationResult]:
    """Train every config on every seed (shared data and seeds) and evaluate each model."""
    results = []
    image_size = train[0].depth.values.shape[0]
    images = np.stack([s.image for s in eval_set])
    for name, base in configs.items():
        for seed in seeds:
            cfg = replace(base, seed=seed)
            trainer = Trainer(cfg, image_size=image_size)
            data = prepare(train, cfg)
            history = trainer.fit(data, steps=steps, log_every=0) if train_fn is None else train_fn(trainer, data)
            preds = trainer.infer(images, runs=runs, seed=seed, steps=ddim_steps)
            _, summary = evaluate_predictions(preds, eval_set)
            summary.name = name
            log.info("%s seed %d: absrel %.4f delta1 %.4f", name, seed, summary.absrel, summary.delta1)
            results.append(AblationResult(name, seed, summary, history))
    return results


ABLATION_COLUMNS = ["config", "seed", "absrel", "delta1"] + [f"delta1_band{i}" for i in range(4)]


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def ablation_table(results: list[AblationResult]) -> str:
    """CSV: one row per (config, seed) then one ``mean`` row per config."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in results:
        s = r.summary
        w.writerow([r.config, r.seed, _fmt(s.absrel), _fmt(s.delta1)] + [_fmt(b) for b in s.band_delta1])
    for name in dict.fromkeys(r.config for r in results):
        group = [r.summary for r in results if r.config == name]
        bands = []
        for b in range(4):
            vals = [g.band_delta1[b] for g in group if g.band_delta1[b] is not None]
            bands.append(float(np.mean(vals)) if vals else None)
        w.writerow([name, "mean", _fmt(np.mean([g.absrel for g in group])),
                    _fmt(np.mean([g.delta1 for g in group]))] + [_fmt(b) for b in bands])
    return buf.getvalue()
