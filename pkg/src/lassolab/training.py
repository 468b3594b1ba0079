"""Adagrad training of the unrolled networks on fresh synthetic batches.

Every step draws a new batch from the generator (online regime); evaluation
runs on a fixed held-out test set drawn once from a dedicated seed substream.
With keep_best the returned parameters are the best finalized candidate seen
on the test set, so training can never return something worse than its init.
"""

import copy
import dataclasses

import numpy as np

from . import networks
from .factorization import stiefel_project
from .problem import build_problem, draw_codes
from .rng import substream


@dataclasses.dataclass
class TrainConfig:
    seed: int
    batch_size: int = 500
    steps: int = 3000
    learning_rate: float = 0.1
    mu: float = 1.0
    eval_every: int = 50
    test_size: int = 1000
    keep_best: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.test_size < 1 or self.eval_every < 1:
            raise ValueError("sizes must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if self.mu < 0.0:
            raise ValueError("mu must be nonnegative")
        if not 0 <= self.seed <= 2**64 - 1:
            raise ValueError("seed must fit in u64")


@dataclasses.dataclass
class AdagradState:
    accumulators: object  # container matching the params, nonnegative
    epsilon: float = 1e-8


def init_adagrad(params):
    return AdagradState(
        accumulators=networks.map_leaves(np.zeros_like, params))


def adagrad_update(state, params, grads, lr):
    """One Adagrad step: acc += g^2; param -= lr * g / sqrt(acc + eps).

    Functional: returns (new_params, new_state). Non-finite gradients raise,
    naming the offending tensor.
    """
    for name, g in networks.param_leaves(grads):
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in {name}")
    acc = networks.map_leaves(lambda a, g: a + g * g,
                              state.accumulators, grads)
    eps = state.epsilon
    new_params = networks.map_leaves(
        lambda p, g, a: p - lr * g / np.sqrt(a + eps),
        params, grads, acc)
    return new_params, AdagradState(accumulators=acc, epsilon=eps)


@dataclasses.dataclass
class TrainTrace:
    records: list            # (step, train_loss, test_loss, penalty)
    diverged: bool = False
    best_step: int = 0
    best_test_loss: float = float("inf")

    def to_csv(self, path):
        lines = ["step,train_loss,test_loss,penalty"]
        for step, train_loss, test_loss, penalty in self.records:
            lines.append(f"{step},{train_loss:.17g},{test_loss:.17g},"
                         f"{penalty:.17g}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def init_params(kind, template, depth, mu=1.0):
    """Classical-solver initialization for each architecture."""
    if kind == "lista":
        return networks.lista_init_from_ista(template, depth)
    if kind == "lfista":
        return networks.lfista_init_from_fista(template, depth)
    if kind == "facnet":
        return networks.facnet_init_identity(template, depth, mu=mu)
    if kind == "linear":
        return networks.linear_init_zero(template)
    raise ValueError(f"unknown model kind {kind!r}")


def finalize_facnet(params):
    """Project every rotation onto the unitary manifold; clamp scales positive."""
    return networks.FacnetParams(
        a=[stiefel_project(a) for a in params.a],
        s=[np.maximum(s, 1e-8) for s in params.s],
        mu=params.mu)


def _finalize(params):
    if isinstance(params, networks.FacnetParams):
        return finalize_facnet(params)
    return copy.deepcopy(params)


def _test_loss(params, test_batch):
    """Held-out data loss (no penalty terms for any architecture)."""
    if isinstance(params, networks.FacnetParams):
        Z, _, _ = networks._facnet_apply(params, test_batch,
                                         np.zeros((test_batch.m, test_batch.count)))
        return float(np.mean(networks._fvalues(test_batch.D, test_batch.lam,
                                               test_batch.X, Z)))
    return networks.network_loss(params, test_batch)


def make_test_batch(dictionary, gen, template, test_size):
    """The fixed held-out set: a dedicated substream of the generator seed."""
    rng = substream(gen.seed, "test")
    codes = draw_codes(rng, gen, test_size)
    X = dictionary.atoms @ codes
    if gen.noise_sigma > 0.0:
        X = X + gen.noise_sigma * rng.standard_normal(X.shape)
    return networks.ProblemBatch.from_parts(dictionary.atoms, gen.lam, X,
                                            B=template.B, L=template.L)


def train(kind, dictionary, gen, cfg, depth, test_batch=None):
    """Train one network; returns (params, TrainTrace).

    The template problem (zero signal) supplies B and L for the inits. Batches
    come from the cfg.seed "batches" substream, one fresh draw per step. The
    trace records an evaluation at step 0 (the init; its train_loss is nan
    since no batch has been drawn) and every eval_every steps thereafter.
    """
    template = build_problem(dictionary, np.zeros(dictionary.n), gen.lam)
    params = init_params(kind, template, depth, mu=cfg.mu)
    params.validate()
    if test_batch is None:
        test_batch = make_test_batch(dictionary, gen, template, cfg.test_size)

    records = []
    best_params = None
    best_loss = float("inf")
    best_step = 0
    diverged = False

    def evaluate(step, train_loss):
        nonlocal best_params, best_loss, best_step
        candidate = _finalize(params)
        test_loss = _test_loss(candidate, test_batch)
        penalty = (networks._facnet_penalty(params)
                   if isinstance(params, networks.FacnetParams) else 0.0)
        records.append((step, train_loss, test_loss, penalty))
        if test_loss < best_loss:
            best_params, best_loss, best_step = candidate, test_loss, step

    evaluate(0, float("nan"))
    opt = init_adagrad(params)
    batch_rng = substream(cfg.seed, "batches")
    train_loss = float("nan")
    for step in range(1, cfg.steps + 1):
        codes = draw_codes(batch_rng, gen, cfg.batch_size)
        X = dictionary.atoms @ codes
        if gen.noise_sigma > 0.0:
            X = X + gen.noise_sigma * batch_rng.standard_normal(X.shape)
        batch = networks.ProblemBatch.from_parts(dictionary.atoms, gen.lam, X,
                                                 B=template.B, L=template.L)
        grads, train_loss = networks.network_backward(params, batch)
        if not np.isfinite(train_loss):
            diverged = True
            evaluate(step, train_loss)
            break
        params, opt = adagrad_update(opt, params, grads, cfg.learning_rate)
        if isinstance(params, networks.FacnetParams):
            # keep the rotated-step scales in their valid range during training
            params = networks.FacnetParams(
                a=params.a, s=[np.maximum(s, 1e-8) for s in params.s],
                mu=params.mu)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            evaluate(step, train_loss)

    final = best_params if cfg.keep_best else _finalize(params)
    trace = TrainTrace(records=records, diverged=diverged,
                       best_step=best_step, best_test_loss=best_loss)
    return final, trace
