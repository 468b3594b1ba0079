"""Sparse coding problem instances and synthetic generators.

A problem is min_z 0.5*||x - D z||^2 + lam*||z||_1 for a dictionary D with
unit-norm columns. Alongside the raw (D, x, lam) triple we precompute the Gram
matrix B = D^T D, its largest eigenvalue L, the least-squares code y (pseudo
inverse applied to x) and D^T x, since every solver and diagnostic consumes
those repeatedly.
"""

import dataclasses
import typing
import warnings

import numpy as np

from .rng import substream


@dataclasses.dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic ensemble parameters.

    rho is the Bernoulli probability of a coefficient being active, sigma the
    standard deviation of active amplitudes, noise_sigma an optional additive
    signal noise level (0 disables it, the default).
    """

    n: int
    m: int
    rho: float
    sigma: float
    lam: float
    dict_kind: str
    seed: int
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if self.lam <= 0.0:
            raise ValueError("lam must be positive")
        if self.dict_kind not in ("gaussian", "adversarial"):
            raise ValueError("dict_kind must be 'gaussian' or 'adversarial'")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")
        if not 0 <= self.seed <= 2**64 - 1:
            raise ValueError("seed must fit in u64")
        if self.rho * self.m < 1.0:
            warnings.warn("expected support size rho*m is below 1", stacklevel=2)


@dataclasses.dataclass(frozen=True)
class Dictionary:
    """Unit-column dictionary plus the metadata needed to regenerate it."""

    atoms: np.ndarray
    kind: str
    seed: int
    zetas: tuple = ()

    @property
    def n(self):
        return self.atoms.shape[0]

    @property
    def m(self):
        return self.atoms.shape[1]


@dataclasses.dataclass(frozen=True)
class SampleBatch:
    codes: np.ndarray    # (m, count) ground-truth sparse codes
    signals: np.ndarray  # (n, count) observed signals


def _normalize_columns(mat):
    norms = np.linalg.norm(mat, axis=0)
    if np.any(norms == 0.0):
        raise ValueError("zero column in dictionary draw")
    return mat / norms


def gen_gaussian_dictionary(cfg):
    """iid standard normal columns, normalized to unit length."""
    if cfg.m <= cfg.n:
        warnings.warn("dictionary is not overcomplete (m <= n)", stacklevel=2)
    rng = substream(cfg.seed, "dictionary")
    atoms = _normalize_columns(rng.standard_normal((cfg.n, cfg.m)))
    return Dictionary(atoms=atoms, kind="gaussian", seed=cfg.seed)


def gen_adversarial_dictionary(cfg):
    """Real sinusoid dictionary built from distinct random frequencies.

    Frequencies zeta_k are drawn without replacement from {1/m, ..., floor(m/2)/m}.
    Atom j stacks cos(2 pi j zeta) over -sin(2 pi j zeta) and is then normalized.
    The resulting Gram matrix has eigenvectors far from any sparse basis, which
    defeats learned reparameterizations of the iteration.
    """
    if cfg.n % 2 != 0:
        raise ValueError("adversarial dictionary needs even n")
    half = cfg.n // 2
    if half > cfg.m // 2:
        raise ValueError("not enough distinct frequencies: need n/2 <= m/2")
    rng = substream(cfg.seed, "dictionary")
    ks = rng.choice(np.arange(1, cfg.m // 2 + 1), size=half, replace=False)
    zetas = np.sort(ks).astype(np.float64) / cfg.m
    j = np.arange(1, cfg.m + 1, dtype=np.float64)
    phase = 2.0 * np.pi * np.outer(zetas, j)
    atoms = _normalize_columns(np.vstack([np.cos(phase), -np.sin(phase)]))
    return Dictionary(atoms=atoms, kind="adversarial", seed=cfg.seed,
                      zetas=tuple(zetas))


def gen_dictionary(cfg):
    if cfg.dict_kind == "gaussian":
        return gen_gaussian_dictionary(cfg)
    return gen_adversarial_dictionary(cfg)


def draw_codes(rng, cfg, count):
    """Bernoulli(rho) support with N(0, sigma^2) amplitudes, from a live rng."""
    mask = rng.random((cfg.m, count)) < cfg.rho
    amps = rng.standard_normal((cfg.m, count)) * cfg.sigma
    return np.where(mask, amps, 0.0)


def sample_codes(cfg, dictionary, count, seed):
    """Draw `count` sparse codes and their signals x = D z (+ optional noise)."""
    if count < 1:
        raise ValueError("count must be positive")
    if dictionary.m != cfg.m or dictionary.n != cfg.n:
        raise ValueError("dictionary shape does not match config")
    rng = substream(seed, "codes")
    codes = draw_codes(rng, cfg, count)
    signals = dictionary.atoms @ codes
    if cfg.noise_sigma > 0.0:
        signals = signals + cfg.noise_sigma * rng.standard_normal(signals.shape)
    return SampleBatch(codes=codes, signals=signals)


def power_iteration(mat, tol=1e-13, max_iter=10000):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Deterministic start vector; stops once the Rayleigh quotient's relative
    change drops below tol. The tight default keeps downstream step sizes 1/L
    safe for descent checks at 1e-12 slack.
    """
    m = mat.shape[0]
    if mat.shape != (m, m):
        raise ValueError("matrix must be square")
    v = np.full(m, 1.0 / np.sqrt(m))
    lam_old = 0.0
    for _ in range(max_iter):
        w = mat @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam = v @ (mat @ v)
        if abs(lam - lam_old) <= tol * max(abs(lam), 1e-300):
            return lam
        lam_old = lam
    return lam_old


@dataclasses.dataclass(frozen=True)
class Problem:
    D: np.ndarray    # (n, m) dictionary
    x: np.ndarray    # (n,) signal
    lam: float
    B: np.ndarray    # (m, m) Gram matrix D^T D
    y: np.ndarray    # (m,) least-squares code, pseudo-inverse of D applied to x
    L: float         # largest eigenvalue of B
    dtx: np.ndarray  # (m,) D^T x

    @property
    def n(self):
        return self.D.shape[0]

    @property
    def m(self):
        return self.D.shape[1]


def build_problem(dictionary, x, lam):
    """Assemble a Problem from a dictionary (or raw (n, m) array), signal, lam."""
    d = dictionary.atoms if isinstance(dictionary, Dictionary) else np.asarray(dictionary)
    d = np.ascontiguousarray(d, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if d.ndim != 2 or x.ndim != 1 or x.shape[0] != d.shape[0]:
        raise ValueError("dictionary/signal shapes do not match")
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(x))):
        raise ValueError("non-finite input")
    gram = d.T @ d
    gram = np.ascontiguousarray((gram + gram.T) / 2.0)
    y = np.linalg.pinv(d, rcond=1e-12) @ x
    lmax = power_iteration(gram)
    return Problem(D=d, x=x, lam=float(lam), B=gram, y=y, L=float(lmax), dtx=d.T @ x)


class LassoCost(typing.NamedTuple):
    f: float       # total objective
    e: float       # 0.5 ||x - D z||^2
    g: float       # lam ||z||_1
    e_gram: float  # 0.5 (y - z)^T B (y - z); differs from e by a z-free constant


def lasso_cost(p, z):
    """Objective pieces at z. Accepts a length-m vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (p.m,):
        raise ValueError("code length does not match problem")
    r = p.x - p.D @ z
    e = 0.5 * (r @ r)
    g = p.lam * np.sum(np.abs(z))
    d = p.y - z
    e_gram = 0.5 * (d @ (p.B @ d))
    return LassoCost(f=e + g, e=e, g=g, e_gram=e_gram)


def quad_form(mat, v, w, lam):
    """0.5 (v - w)^T M (v - w) + lam ||v||_1, with M a matrix or a diagonal vector."""
    mat = np.asarray(mat, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape or v.ndim != 1:
        raise ValueError("v and w must be equal-length vectors")
    d = v - w
    if mat.ndim == 1:
        if mat.shape != v.shape:
            raise ValueError("diagonal length does not match vectors")
        quad = 0.5 * np.sum(mat * d * d)
    elif mat.ndim == 2:
        if mat.shape != (v.shape[0], v.shape[0]):
            raise ValueError("matrix shape does not match vectors")
        quad = 0.5 * (d @ (mat @ d))
    else:
        raise ValueError("M must be a matrix or a diagonal vector")
    return float(quad + lam * np.sum(np.abs(v)))


def duality_gap(p, z):
    """Certified optimality gap at z.

    Scales the residual into the dual-feasible set (||D^T nu||_inf <= lam) and
    returns F(z) minus the dual value; zero exactly at the minimizer.
    """
    z = np.asarray(z, dtype=np.float64)
    cost = lasso_cost(p, z)
    r = p.x - p.D @ z
    corr = np.max(np.abs(p.D.T @ r)) if r.size else 0.0
    c = 1.0 if corr <= p.lam else p.lam / corr
    nu = c * r
    dual = 0.5 * (p.x @ p.x) - 0.5 * np.sum((p.x - nu) ** 2)
    return float(cost.f - dual)


_DICT_MAGIC = "lassolab dictionary v1"


def save_dictionary(dictionary, path):
    """Text format: header lines (n, m, kind, seed, zetas), then the atom rows."""
    lines = [_DICT_MAGIC,
             f"n {dictionary.n}",
             f"m {dictionary.m}",
             f"kind {dictionary.kind}",
             f"seed {dictionary.seed}"]
    if dictionary.kind == "adversarial":
        lines.append("zetas " + " ".join(f"{z:.17g}" for z in dictionary.zetas))
    lines.append("data")
    for row in dictionary.atoms:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dictionary(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _DICT_MAGIC:
        raise ValueError("unrecognized dictionary file")
    fields = {}
    i = 1
    while i < len(lines) and lines[i] != "data":
        key, _, rest = lines[i].partition(" ")
        fields[key] = rest
        i += 1
    if i == len(lines):
        raise ValueError("missing data section")
    n, m = int(fields["n"]), int(fields["m"])
    rows = lines[i + 1:i + 1 + n]
    if len(rows) != n:
        raise ValueError("truncated dictionary data")
    atoms = np.array([[float(v) for v in row.split()] for row in rows])
    if atoms.shape != (n, m):
        raise ValueError("dictionary data shape mismatch")
    zetas = tuple(float(v) for v in fields.get("zetas", "").split())
    return Dictionary(atoms=atoms, kind=fields["kind"], seed=int(fields["seed"]),
                      zetas=zetas)
