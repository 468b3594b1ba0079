"""Unrolled networks: forward passes, hand-derived gradients, exact inits.

Four architectures. The ISTA unrolling with free gain/input weights and
thresholds; its two-tap momentum variant; the factorized form whose layers are
rotated proximal steps in (A, S); and a single linear layer used as a warm
start. Gradients are exact reverse-mode under the convention that units
sitting exactly at the threshold are inactive (zero derivative).

Batch convention: a batch shares (D, lam); signals are the columns of X.
"""

import dataclasses

import numpy as np

from .factorization import _layer_forward, _layer_vjp, rotated_prox_step, Factorization
from .kernels import shrink_mask


@dataclasses.dataclass
class ProblemBatch:
    """Shared-dictionary batch: one (D, lam) and many signal columns."""

    D: np.ndarray    # (n, m)
    lam: float
    B: np.ndarray    # (m, m)
    L: float
    X: np.ndarray    # (n, count)
    dtX: np.ndarray  # (m, count)

    @classmethod
    def from_parts(cls, D, lam, X, B=None, L=None):
        D = np.ascontiguousarray(D, dtype=np.float64)
        X = np.ascontiguousarray(X, dtype=np.float64)
        if B is None:
            B = D.T @ D
            B = (B + B.T) / 2.0
        if L is None:
            from .problem import power_iteration

            L = power_iteration(B)
        return cls(D=D, lam=float(lam), B=B, L=float(L), X=X, dtX=D.T @ X)

    @classmethod
    def from_problems(cls, problems):
        if not problems:
            raise ValueError("empty batch")
        first = problems[0]
        for p in problems[1:]:
            if not (np.array_equal(p.D, first.D) and p.lam == first.lam):
                raise ValueError("batch problems must share dictionary and lam")
        X = np.column_stack([p.x for p in problems])
        return cls(D=first.D, lam=first.lam, B=first.B, L=first.L, X=X,
                   dtX=first.D.T @ X)

    @classmethod
    def from_problem(cls, p):
        return cls.from_problems([p])

    @property
    def count(self):
        return self.X.shape[1]

    @property
    def m(self):
        return self.D.shape[1]


@dataclasses.dataclass
class ListaParams:
    w_g: list    # K matrices (m, m)
    w_e: list    # K matrices (m, n)
    theta: list  # K vectors (m,)

    kind = "lista"

    @property
    def depth(self):
        return len(self.theta)

    def validate(self):
        for th in self.theta:
            if np.any(th <= 0.0):
                raise ValueError("thresholds must be positive")
        if self.depth < 1:
            raise ValueError("need at least one layer")


@dataclasses.dataclass
class LfistaParams:
    w_g: list
    w_m: list    # memory tap matrices (m, m)
    w_e: list
    theta: list

    kind = "lfista"

    @property
    def depth(self):
        return len(self.theta)

    def validate(self):
        for th in self.theta:
            if np.any(th <= 0.0):
                raise ValueError("thresholds must be positive")
        if self.depth < 1:
            raise ValueError("need at least one layer")


@dataclasses.dataclass
class FacnetParams:
    a: list       # K matrices (m, m), intended unitary
    s: list       # K vectors (m,), positive
    mu: float     # unitarity penalty weight (hyperparameter, not trained)

    kind = "facnet"

    @property
    def depth(self):
        return len(self.s)

    def validate(self):
        for s in self.s:
            if np.any(s <= 0.0):
                raise ValueError("diagonal scales must be positive")
        if self.mu < 0.0:
            raise ValueError("mu must be nonnegative")
        if self.depth < 1:
            raise ValueError("need at least one layer")


@dataclasses.dataclass
class LinearParams:
    a0: np.ndarray  # (m, n)

    kind = "linear"

    @property
    def depth(self):
        return 1

    def validate(self):
        if not np.all(np.isfinite(self.a0)):
            raise ValueError("non-finite entries")


# ---------------------------------------------------------------------------
# inits that reproduce the classical solvers exactly


def lista_init_from_ista(p, depth):
    """Every layer = one ISTA step: W_g = I - B/L, W_e = D^T/L, theta = lam/L."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    w_g = np.eye(p.m) - p.B / p.L
    w_e = p.D.T / p.L
    th = np.full(p.m, p.lam / p.L)
    return ListaParams(w_g=[w_g.copy() for _ in range(depth)],
                       w_e=[w_e.copy() for _ in range(depth)],
                       theta=[th.copy() for _ in range(depth)])


def lfista_init_from_fista(p, depth):
    """Layer k reproduces the k-th FISTA step via the momentum coefficients.

    With gamma_k = (t_{k-1} - 1)/t_k along the standard t recurrence,
    W_g = (1 + gamma)(I - B/L) and W_m = -gamma (I - B/L); the first layer has
    zero momentum.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    base = np.eye(p.m) - p.B / p.L
    w_e = p.D.T / p.L
    th = np.full(p.m, p.lam / p.L)
    w_g, w_m = [], []
    t = 1.0
    for _ in range(depth):
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        gamma = (t - 1.0) / t_next
        w_g.append((1.0 + gamma) * base)
        w_m.append(-gamma * base)
        t = t_next
    return LfistaParams(w_g=w_g, w_m=w_m,
                        w_e=[w_e.copy() for _ in range(depth)],
                        theta=[th.copy() for _ in range(depth)])


def facnet_init_identity(p, depth, mu=1.0):
    """Every layer at the ISTA point of the factorization space: (I, L * ones)."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    return FacnetParams(a=[np.eye(p.m) for _ in range(depth)],
                        s=[np.full(p.m, p.L) for _ in range(depth)],
                        mu=float(mu))


def linear_init_zero(p):
    return LinearParams(a0=np.zeros((p.m, p.n)))


# ---------------------------------------------------------------------------
# forward passes


def _promote(x, m, z0):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[:, None] if single else x
    if z0 is None:
        Z0 = np.zeros((m, X.shape[1]))
    else:
        z0 = np.asarray(z0, dtype=np.float64)
        Z0 = z0[:, None] if z0.ndim == 1 else z0.copy()
    return X, Z0, single


def _lista_apply(params, X, Z0, with_cache=False):
    Z = Z0
    iterates = [Z]
    caches = []
    for wg, we, th in zip(params.w_g, params.w_e, params.theta):
        pre = wg @ Z + we @ X
        U, M = shrink_mask(pre, th)
        if with_cache:
            caches.append((Z, U, M))
        Z = U
        iterates.append(Z)
    return Z, iterates, caches


def lista_forward(params, x, z0=None):
    """Apply the K layers from z0 (default 0); returns (z_K, all iterates)."""
    m = params.w_g[0].shape[0]
    X, Z0, single = _promote(x, m, z0)
    Z, iterates, _ = _lista_apply(params, X, Z0)
    if single:
        return Z[:, 0], [it[:, 0] for it in iterates]
    return Z, iterates


def _lfista_apply(params, X, Z0, with_cache=False):
    Z = Z0
    Zprev = Z0  # the pre-start iterate is defined as z0 itself
    iterates = [Z]
    caches = []
    for wg, wm, we, th in zip(params.w_g, params.w_m, params.w_e, params.theta):
        pre = wg @ Z + wm @ Zprev + we @ X
        U, M = shrink_mask(pre, th)
        if with_cache:
            caches.append((Z, Zprev, U, M))
        Zprev, Z = Z, U
        iterates.append(Z)
    return Z, iterates, caches


def lfista_forward(params, x, z0=None):
    """Two-tap recurrence z_{k+1} = h_theta(W_g z_k + W_m z_{k-1} + W_e x)."""
    m = params.w_g[0].shape[0]
    X, Z0, single = _promote(x, m, z0)
    Z, iterates, _ = _lfista_apply(params, X, Z0)
    if single:
        return Z[:, 0], [it[:, 0] for it in iterates]
    return Z, iterates


def _facnet_apply(params, batch, Z0, with_cache=False):
    Z = Z0
    iterates = [Z]
    caches = []
    for a, s in zip(params.a, params.s):
        G = batch.B @ Z - batch.dtX
        Z, cache = _layer_forward(a, s, Z, G, batch.lam)
        if with_cache:
            caches.append(cache)
        iterates.append(Z)
    return Z, iterates, caches


def facnet_forward(params, p, z0=None):
    """Layer k applies the rotated proximal step under (A^(k), S^(k)).

    Single-sample calls take the exact rotated_prox_step path, so a layer
    output is bit-identical to calling that operation directly.
    """
    if z0 is None:
        z0 = np.zeros(p.m)
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.ndim == 1:
        z = z0.copy()
        iterates = [z]
        for a, s in zip(params.a, params.s):
            z = rotated_prox_step(p, Factorization(A=a, S=s), z)
            iterates.append(z)
        return z, iterates
    batch = ProblemBatch.from_problem(p) if not isinstance(p, ProblemBatch) else p
    Z, iterates, _ = _facnet_apply(params, batch, z0)
    return Z, iterates


def linear_forward(params, x):
    """z_out = A0 x; meant as a warm start for the iterative solvers."""
    return params.a0 @ np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# losses and hand reverse-mode gradients


def _fvalues(D, lam, X, Z):
    r = X - D @ Z
    return 0.5 * np.sum(r * r, axis=0) + lam * np.sum(np.abs(Z), axis=0)


def _final_cotangent(batch, Z):
    # gradient of mean_i F(z_i) in the output codes, l1 via sign(0)=0
    r = batch.D @ Z - batch.X
    return (batch.D.T @ r + batch.lam * np.sign(Z)) / batch.count


def _facnet_penalty(params):
    m = params.a[0].shape[0]
    eye = np.eye(m)
    total = 0.0
    for a in params.a:
        gap = eye - a.T @ a
        total += float(np.sum(gap * gap))
    return params.mu / params.depth * total


def network_loss(params, batch):
    """Mean objective of the network output over the batch.

    FacNet adds its unitarity penalty (mu/K) * sum_k ||I - A_k^T A_k||_F^2.
    The linear model uses its own cost: ||I - D A0||_F^2 computed once plus
    the batch-averaged l1 term.
    """
    if isinstance(params, LinearParams):
        Z = params.a0 @ batch.X
        recon = np.eye(batch.D.shape[0]) - batch.D @ params.a0
        return float(np.sum(recon * recon)
                     + batch.lam * np.mean(np.sum(np.abs(Z), axis=0)))
    Z0 = np.zeros((batch.m, batch.count))
    if isinstance(params, ListaParams):
        Z, _, _ = _lista_apply(params, batch.X, Z0)
        return float(np.mean(_fvalues(batch.D, batch.lam, batch.X, Z)))
    if isinstance(params, LfistaParams):
        Z, _, _ = _lfista_apply(params, batch.X, Z0)
        return float(np.mean(_fvalues(batch.D, batch.lam, batch.X, Z)))
    if isinstance(params, FacnetParams):
        Z, _, _ = _facnet_apply(params, batch, Z0)
        return float(np.mean(_fvalues(batch.D, batch.lam, batch.X, Z))
                     + _facnet_penalty(params))
    raise TypeError("unknown parameter container")


def network_backward(params, batch):
    """Exact reverse-mode gradients of network_loss; returns (grads, loss).

    Gradients come back in a container of the same shape as params. For
    FacNet the penalty gradient is included and A contributes through all
    three of its occurrences in each layer.
    """
    if isinstance(params, LinearParams):
        Z = params.a0 @ batch.X
        recon = np.eye(batch.D.shape[0]) - batch.D @ params.a0
        loss = float(np.sum(recon * recon)
                     + batch.lam * np.mean(np.sum(np.abs(Z), axis=0)))
        grad = (-2.0 * batch.D.T @ recon
                + (batch.lam / batch.count) * np.sign(Z) @ batch.X.T)
        return LinearParams(a0=grad), loss

    Z0 = np.zeros((batch.m, batch.count))
    if isinstance(params, ListaParams):
        Z, _, caches = _lista_apply(params, batch.X, Z0, with_cache=True)
        loss = float(np.mean(_fvalues(batch.D, batch.lam, batch.X, Z)))
        gz = _final_cotangent(batch, Z)
        g_wg = [None] * params.depth
        g_we = [None] * params.depth
        g_th = [None] * params.depth
        for k in range(params.depth - 1, -1, -1):
            Zin, U, M = caches[k]
            wbar = gz * M
            g_th[k] = -np.sum(np.sign(U) * wbar, axis=1)
            g_wg[k] = wbar @ Zin.T
            g_we[k] = wbar @ batch.X.T
            gz = params.w_g[k].T @ wbar
        return ListaParams(w_g=g_wg, w_e=g_we, theta=g_th), loss

    if isinstance(params, LfistaParams):
        Z, _, caches = _lfista_apply(params, batch.X, Z0, with_cache=True)
        loss = float(np.mean(_fvalues(batch.D, batch.lam, batch.X, Z)))
        depth = params.depth
        # cot[j] is the cotangent of iterate z_j; z_0 is constant so index 0
        # only absorbs discarded contributions
        cot = [np.zeros_like(Z) for _ in range(depth + 1)]
        cot[depth] = _final_cotangent(batch, Z)
        g_wg = [None] * depth
        g_wm = [None] * depth
        g_we = [None] * depth
        g_th = [None] * depth
        for k in range(depth, 0, -1):
            Zin, Zprevin, U, M = caches[k - 1]
            wbar = cot[k] * M
            g_th[k - 1] = -np.sum(np.sign(U) * wbar, axis=1)
            g_wg[k - 1] = wbar @ Zin.T
            g_wm[k - 1] = wbar @ Zprevin.T
            g_we[k - 1] = wbar @ batch.X.T
            if k - 1 >= 1:
                cot[k - 1] += params.w_g[k - 1].T @ wbar
            if k - 2 >= 1:
                cot[k - 2] += params.w_m[k - 1].T @ wbar
        return LfistaParams(w_g=g_wg, w_m=g_wm, w_e=g_we, theta=g_th), loss

    if isinstance(params, FacnetParams):
        Z, _, caches = _facnet_apply(params, batch, Z0, with_cache=True)
        data = float(np.mean(_fvalues(batch.D, batch.lam, batch.X, Z)))
        loss = data + _facnet_penalty(params)
        gz = _final_cotangent(batch, Z)
        g_a = [None] * params.depth
        g_s = [None] * params.depth
        eye = np.eye(batch.m)
        coef = params.mu / params.depth
        for k in range(params.depth - 1, -1, -1):
            abar, sbar, gz = _layer_vjp(params.a[k], params.s[k], batch.lam,
                                        caches[k], gz, batch.B)
            abar = abar - 4.0 * coef * (params.a[k] @ (eye - params.a[k].T @ params.a[k]))
            g_a[k] = abar
            g_s[k] = sbar
        return FacnetParams(a=g_a, s=g_s, mu=params.mu), loss

    raise TypeError("unknown parameter container")


# ---------------------------------------------------------------------------
# parameter tree utilities and checkpoints

_ARRAY_FIELDS = {
    "lista": ("w_g", "w_e", "theta"),
    "lfista": ("w_g", "w_m", "w_e", "theta"),
    "facnet": ("a", "s"),
    "linear": ("a0",),
}


def param_leaves(params):
    """Flat list of (name, array) pairs over the trainable tensors."""
    out = []
    for field in _ARRAY_FIELDS[params.kind]:
        value = getattr(params, field)
        if isinstance(value, np.ndarray):
            out.append((field, value))
        else:
            out.extend((f"{field}[{i}]", arr) for i, arr in enumerate(value))
    return out


def map_leaves(fn, *containers):
    """Apply fn across corresponding arrays; returns a container like the first."""
    first = containers[0]
    kwargs = {}
    for field in _ARRAY_FIELDS[first.kind]:
        values = [getattr(c, field) for c in containers]
        if isinstance(values[0], np.ndarray):
            kwargs[field] = fn(*values)
        else:
            kwargs[field] = [fn(*arrs) for arrs in zip(*values)]
    if first.kind == "facnet":
        kwargs["mu"] = first.mu
    return type(first)(**kwargs)


CHECKPOINT_VERSION = 1


def save_params(params, path, n=None):
    """Checkpoint: header (kind, version, depth, m, n, mu) + layer arrays."""
    leaves = dict(param_leaves(params))
    if params.kind == "linear":
        m, n = params.a0.shape
    elif params.kind == "facnet":
        m = params.a[0].shape[0]
        if n is None:
            raise ValueError("facnet checkpoints need the signal size n")
    else:
        m, n = params.w_e[0].shape
    mu = params.mu if params.kind == "facnet" else 0.0
    np.savez(path, __kind=params.kind, __version=CHECKPOINT_VERSION,
             __depth=params.depth, __m=m, __n=n, __mu=mu, **leaves)


def load_params(path):
    with np.load(path) as data:
        kind = str(data["__kind"])
        version = int(data["__version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        depth = int(data["__depth"])
        mu = float(data["__mu"])
        arrays = {k: data[k] for k in data.files if not k.startswith("__")}
    if kind not in _ARRAY_FIELDS:
        raise ValueError(f"unknown checkpoint kind {kind}")
    if kind == "linear":
        return LinearParams(a0=arrays["a0"])
    kwargs = {}
    for field in _ARRAY_FIELDS[kind]:
        kwargs[field] = [arrays[f"{field}[{i}]"] for i in range(depth)]
    if kind == "facnet":
        kwargs["mu"] = mu
        return FacnetParams(**kwargs)
    if kind == "lista":
        return ListaParams(**kwargs)
    return LfistaParams(**kwargs)
