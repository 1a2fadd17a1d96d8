"""Shared oracles for the test suite."""

from __future__ import annotations

import numpy as np

from resume_forge.losses import LossKind, batch_mean_loss, eval_loss, eval_loss_gradient
from resume_forge.mlp import ModelSpec, ModelState, backward, forward, init_model

H = 1e-6
KINK = 1e-4  # distance from a non-differentiable point below which a sample is redrawn
# Central differences at h = 1e-6 carry ~1e-10 absolute roundoff, so relative
# error is only meaningful above ~1e-5; smaller components are compared
# absolutely (1e-5 * floor = 1e-9).
DENOM_FLOOR = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), DENOM_FLOOR)
    return float(np.max(np.abs(a - n) / denom))


def central_difference(f, x: np.ndarray, h: float = H) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        up = f(x)
        x[i] = orig - h
        down = f(x)
        x[i] = orig
        g[i] = (up - down) / (2 * h)
    return g


def near_kink(kind: LossKind, p: np.ndarray, t: np.ndarray) -> bool:
    if kind.name == "hinge":
        return bool(np.any(np.abs(1 - t * p) < KINK))
    if kind.name == "huber":
        return bool(np.any(np.abs(np.abs(p - t) - kind.delta) < KINK))
    if kind.name == "l1":
        return bool(np.any(np.abs(p - t) < KINK))
    return False


def sample_loss_point(kind: LossKind, rng: np.random.Generator, d: int = 4):
    """A random (prediction, target) pair away from kinks and probability clipping."""
    while True:
        if kind.takes_distribution:
            p = rng.uniform(0.05, 0.95, d)
            t = rng.dirichlet(np.ones(d))
        elif kind.name == "hinge":
            p = rng.normal(0, 1.5, d)
            t = rng.choice([-1.0, 1.0], d)
        else:
            p = rng.normal(0, 2, d)
            t = rng.normal(0, 2, d)
        if not near_kink(kind, p, t):
            return p, t


def loss_gradient_error(kind: LossKind, p: np.ndarray, t: np.ndarray) -> float:
    numeric = central_difference(lambda x: eval_loss(kind, x, t), p)
    return relative_error(eval_loss_gradient(kind, p, t), numeric)


def random_network(kind: LossKind, rng: np.random.Generator, hidden: tuple[str, ...]):
    sizes = (3, 4, 3, 3)
    out_act = "softmax" if kind.takes_distribution else "identity"
    spec = ModelSpec(sizes, hidden, out_act, int(rng.integers(0, 2**63)))
    model, _ = init_model(spec)
    n = 4
    x = rng.normal(size=(n, sizes[0]))
    if kind.takes_distribution:
        t = rng.dirichlet(np.ones(sizes[-1]), size=n)
    elif kind.name == "hinge":
        t = rng.choice([-1.0, 1.0], size=(n, sizes[-1]))
    else:
        t = rng.normal(size=(n, sizes[-1]))
    return model, x, t


def _network_near_kink(model: ModelState, x, t, kind: LossKind) -> bool:
    trace = forward(model, x)
    if any(a == "relu" for a in model.spec.activations):
        for z, act in zip(trace.pre[:-1], model.spec.activations):
            if act == "relu" and np.any(np.abs(z) < KINK):
                return True
    return near_kink(kind, trace.outputs, t)


def network_gradient_error(model: ModelState, x, t, kind: LossKind) -> float | None:
    """Worst relative error over all parameters, or None when too close to a kink."""
    if _network_near_kink(model, x, t, kind):
        return None
    grads = backward(model, forward(model, x), t, kind)
    worst = 0.0
    for group, analytic in (("weights", grads.weights), ("biases", grads.biases)):
        params = getattr(model, group)
        for layer, g in enumerate(analytic):
            def f(values, layer=layer, params=params):
                saved = params[layer]
                params[layer] = values
                try:
                    return batch_mean_loss(kind, forward(model, x).outputs, t)
                finally:
                    params[layer] = saved

            worst = max(worst, relative_error(g, central_difference(f, params[layer].copy())))
    return worst


def make_snapshot(seed: int = 0, steps: int = 5, *, layer_sizes=(2, 4, 3), history: int = 2):
    """A realistic snapshot: a few SGD steps on random data plus a fake history."""
    from resume_forge.codec import CheckpointSnapshot
    from resume_forge.mlp import OptimizerConfig, sgd_step
    from resume_forge.rng import Xoshiro256

    rng = np.random.default_rng(seed)
    spec = ModelSpec(tuple(layer_sizes), ("tanh",) * (len(layer_sizes) - 2), "softmax", seed)
    model, opt = init_model(spec)
    cfg = OptimizerConfig(0.1, 0.9, LossKind("huber", 0.5) if seed % 2 else LossKind("cross_entropy"))
    x = rng.normal(size=(6, layer_sizes[0]))
    t = np.eye(layer_sizes[-1])[rng.integers(0, layer_sizes[-1], 6)]
    for _ in range(steps):
        model, opt = sgd_step(model, backward(model, forward(model, x), t, cfg.loss), opt, cfg)
    hist = [(e, float(rng.uniform(0, 2)), float(rng.uniform())) for e in range(history)]
    return CheckpointSnapshot(
        epoch=history,
        global_step=steps,
        model=model,
        optimizer=opt,
        optimizer_config=cfg,
        rng_state=Xoshiro256(seed + 1).state,
        epoch_shuffle_seed=seed * 7919,
        step_in_epoch=steps % 4,
        metric_history=hist,
        best_metric=hist[-1][1] if hist else None,
        best_epoch=history - 1 if hist else None,
        shuffle_seed=seed,
        batch_size=4,
        dataset_size=16,
        wall_time_unix_seconds=1_700_000_000 + seed,
    )


class RecordingStore:
    """Wraps a store and remembers (role, global_step, epoch) of every successful put."""

    def __init__(self, inner):
        self.inner = inner
        self.puts: list[tuple[str, int, int]] = []

    def put_checkpoint(self, role, data):
        from resume_forge.codec import decode_checkpoint

        desc = self.inner.put_checkpoint(role, data)
        snap = decode_checkpoint(data)
        self.puts.append((desc.role.prefix, snap.global_step, snap.epoch))
        return desc

    def __getattr__(self, name):
        return getattr(self.inner, name)
