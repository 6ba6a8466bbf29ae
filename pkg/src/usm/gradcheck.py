"""Full-model gradient check against central finite differences."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .flow import fm_loss, logit_normal_weight
from .net import ModelConfig, class_context, init_params, usm_forward
from .params import param_dict
from .tensor import Tensor, backward, no_grad


@dataclass
class GroupResult:
    group: str
    n_coords: int
    n_ok: int
    max_rel: float
    max_abs: float

    @property
    def frac_ok(self) -> float:
        return self.n_ok / self.n_coords if self.n_coords else 1.0


def group_of(name: str) -> str:
    """Parameter group: the name with list indices replaced by ``*``."""
    return re.sub(r"\.\d+\.", ".*.", name)


def coord_ok(analytic, numeric, rel_tol: float, abs_floor: float):
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0)
    return (diff <= abs_floor) | (rel < rel_tol), rel, diff


def model_gradcheck(config: ModelConfig, seed: int = 0, coords_per_group: int = 200,
                    eps: float = 1e-6, perturb: float = 0.1, batch: int = 2,
                    rel_tol: float = 1e-4, abs_floor: float = 1e-8) -> list[GroupResult]:
    """Compare analytic and numeric gradients of the flow-matching loss.

    Every parameter gets Gaussian noise of scale ``perturb`` first, so the
    zero-initialised gates and projections are live and every path carries
    gradient. Up to ``coords_per_group`` coordinates are drawn per group (all
    of them when the group is smaller).
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, rng)
    named = param_dict(params)
    for t in named.values():
        t.data = t.data + perturb * rng.standard_normal(t.shape)

    x = rng.standard_normal((batch, config.c, config.h, config.w))
    e = rng.standard_normal(x.shape)
    tt = rng.uniform(0.1, 0.9, batch)
    tb = tt[:, None, None, None]
    z, v, w = tb * x + (1 - tb) * e, x - e, logit_normal_weight(tt)
    labels = rng.integers(0, max(config.n_classes, 1), batch)
    ctx_free = rng.standard_normal((batch, 3, config.ctx_dim)) if config.use_text else None

    def loss():
        if config.use_text and params.class_embed is not None:
            ctx = class_context(params, labels)
        else:
            ctx = None if ctx_free is None else Tensor(ctx_free)
        return fm_loss(usm_forward(Tensor(z), tt, ctx, params, config), v, w)

    grads = backward(loss())
    groups: dict[str, list[tuple[str, int]]] = {}
    for name, t in named.items():
        groups.setdefault(group_of(name), []).extend((name, i) for i in range(t.data.size))

    results = []
    for g, coords in sorted(groups.items()):
        if len(coords) > coords_per_group:
            pick = rng.choice(len(coords), coords_per_group, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        analytic = np.empty(len(coords))
        numeric = np.empty(len(coords))
        for k, (name, i) in enumerate(coords):
            t = named[name]
            gr = grads.get(t)
            analytic[k] = 0.0 if gr is None else gr.reshape(-1)[i]
            flat = t.data.reshape(-1)
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = loss().item()
                flat[i] = orig - eps
                fm = loss().item()
            flat[i] = orig
            numeric[k] = (fp - fm) / (2 * eps)
        ok, rel, diff = coord_ok(analytic, numeric, rel_tol, abs_floor)
        results.append(GroupResult(g, len(coords), int(ok.sum()), float(rel.max()), float(diff.max())))
    return results


def format_results(results: list[GroupResult]) -> str:
    lines = [f"{'group':<34} {'coords':>6} {'ok':>6} {'max_rel':>10} {'max_abs':>10}"]
    for r in results:
        lines.append(f"{r.group:<34} {r.n_coords:>6} {r.n_ok:>6} {r.max_rel:>10.2e} {r.max_abs:>10.2e}")
    return "\n".join(lines)
