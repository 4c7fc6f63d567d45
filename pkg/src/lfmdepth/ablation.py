"""Named ablation suites: each maps config labels to TrainConfig variants of one base config."""

from __future__ import annotations

import csv
import io
from dataclasses import replace

import numpy as np

from .trainer import AblationResult, TrainConfig, smoothed


def suite_configs(suite: str, base: TrainConfig | None = None) -> dict[str, TrainConfig]:
    base = base or TrainConfig()
    r = lambda **kw: replace(base, **kw)  # noqa: E731
    if suite == "biasmap":
        return {"none": r(biasmap_on=False),
                "distance": r(w_struct_on=False),
                "structure": r(w_dist_on=False),
                "distance+structure": r()}
    if suite == "pooling":
        return {f"dist-{d}/struct-{s}": r(dist_pool=d, struct_pool=s)
                for d in ("avg", "max") for s in ("avg", "max")}
    if suite == "gamma":
        return {f"gamma={g:g}": r(gamma=g) for g in (1.0, 5.0, 20.0)}
    if suite == "placement":
        return {p: r(placement=p, lfm_on=p != "none") for p in
                ("none", "encoder-early", "middle", "decoder-early",
                 "decoder-penultimate", "decoder-final", "all-blocks")}
    if suite == "filters":
        return {f"N={n}": r(n_masks=n) for n in (1, 2, 4, 8)}
    if suite == "router":
        out = {"no-lfm": r(lfm_on=False), "fixed-mask": r(learnable_bank=False)}
        out.update({v: r(router=v) for v in ("PM", "LE+PM", "LE+LKC+PM", "LE+SA+PM")})
        return out
    if suite == "overall":
        plain = r(lfm_on=False, biasmap_on=False, var_loss_on=False)
        return {"baseline": plain,
                "+lfm": replace(plain, lfm_on=True),
                "+biasmap": replace(plain, biasmap_on=True),
                "+var-loss": replace(plain, var_loss_on=True),
                "full": r()}
    raise KeyError(f"unknown suite {suite!r}; choose from {SUITES}")


SUITES = ("biasmap", "pooling", "gamma", "placement", "filters", "router", "overall")

CURVE_COLUMNS = ["config", "seed", "step", "L_latent", "L_var", "L_total", "eta",
                 "w_final_absdev", "L_total_smoothed"]


def loss_curves_csv(results: list[AblationResult], window: int = 25) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for res in results:
        sm = smoothed([h["L_total"] for h in res.history], window)
        for h, s in zip(res.history, sm):
            w.writerow([res.config, res.seed, h["step"], f"{h['L_latent']:.6g}", f"{h['L_var']:.6g}",
                        f"{h['L_total']:.6g}", f"{h['eta']:.6g}", f"{h['w_final_absdev']:.6g}", f"{s:.6g}"])
    return buf.getvalue()


def loss_stats(results: list[AblationResult], last_step: int = 500) -> dict[str, dict[str, float]]:
    """Per config, seed-averaged loss variance and mean |w_final - 1| over steps <= ``last_step``."""
    out: dict[str, dict[str, list]] = {}
    for res in results:
        rows = [h for h in res.history if h["step"] <= last_step]
        d = out.setdefault(res.config, {"loss_var": [], "w_final_absdev": []})
        d["loss_var"].append(float(np.var([h["L_total"] for h in rows])))
        d["w_final_absdev"].append(float(np.mean([h["w_final_absdev"] for h in rows])))
    return {k: {m: float(np.mean(v)) for m, v in d.items()} for k, d in out.items()}


def summary_text(suite: str, results: list[AblationResult]) -> str:
    lines = [f"suite: {suite}", f"{'config':<24}{'absrel':>10}{'delta1':>10}"
             + "".join(f"{'band' + str(b):>10}" for b in range(4))]
    for name in dict.fromkeys(r.config for r in results):
        group = [r.summary for r in results if r.config == name]
        bands = []
        for b in range(4):
            vals = [g.band_delta1[b] for g in group if g.band_delta1[b] is not None]
            bands.append(f"{np.mean(vals):10.4f}" if vals else f"{'-':>10}")
        lines.append(f"{name:<24}{np.mean([g.absrel for g in group]):10.4f}"
                     f"{np.mean([g.delta1 for g in group]):10.4f}" + "".join(bands))
    stats = loss_stats(results)
    lines.append("")
    lines.append(f"{'config':<24}{'loss var':>12}{'|w_final-1|':>14}")
    for name, s in stats.items():
        lines.append(f"{name:<24}{s['loss_var']:12.6f}{s['w_final_absdev']:14.6f}")
    return "\n".join(lines) + "\n"
