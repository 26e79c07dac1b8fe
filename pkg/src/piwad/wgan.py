"""WGAN-GP sampler over the (z-normalized) feature distribution and a PCA fidelity audit."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import autodiff as ad
from .autodiff import ParamStore
from .data import FeatureTable, Normalizer
from .training import GanConfig, NumericError

log = logging.getLogger(__name__)


@dataclass
class GanModel:
    store: ParamStore
    names: list[str]
    normalizer: Normalizer
    latent_dim: int = 32
    hidden: int = 64
    penalty: float = 10.0
    n_critic: int = 5
    steps: int = 0
    embedding_pool: np.ndarray | None = None
    trace: list = field(default_factory=list)  # (iteration, L_d, L_g)

    def __post_init__(self):
        if self.penalty <= 0:
            raise ValueError("penalty weight must be positive")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")

    @property
    def m(self) -> int:
        return len(self.names)

    def gen_params(self, params=None):
        p = self.store if params is None else params
        return {k: p[k] for k in self.store.names("gen.")}

    def generate(self, z, params=None):
        return mlp(self.gen_params(params), "gen", z)

    def critic(self, x, params=None):
        p = self.store if params is None else params
        return mlp(p, "critic", x)


def mlp(p, prefix, x, layers=3):
    h = x
    for i in range(layers):
        h = ad.add(ad.matmul(h, p[f"{prefix}.W{i}"]), p[f"{prefix}.b{i}"])
        if i < layers - 1:
            h = ad.relu(h)
    return h


def _init_mlp(store, prefix, sizes, rng):
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        r = 1.0 / np.sqrt(a)
        store.add(f"{prefix}.W{i}", rng.uniform(-r, r, size=(a, b)))
        store.add(f"{prefix}.b{i}", rng.uniform(-r, r, size=(b,)))


def init_gan(table: FeatureTable, config: GanConfig | None = None, seed: int = 0) -> GanModel:
    cfg = config or GanConfig()
    rng = np.random.default_rng([seed, 10])
    m = table.m
    store = ParamStore()
    _init_mlp(store, "gen", [cfg.latent_dim, cfg.hidden, cfg.hidden, m], rng)
    _init_mlp(store, "critic", [m, cfg.hidden, cfg.hidden, 1], rng)
    return GanModel(
        store=store,
        names=list(table.names),
        normalizer=Normalizer.fit(table.X),
        latent_dim=cfg.latent_dim,
        hidden=cfg.hidden,
        penalty=cfg.penalty,
        n_critic=cfg.n_critic,
        embedding_pool=None if table.embeddings is None else table.embeddings.copy(),
    )


def gradient_penalty(critic, x_real, x_fake, lam, rng, tape=None):
    """lam * mean((||grad_x D(x_hat)|| - 1)^2) on random interpolates x_hat.

    ``critic`` maps a node of shape (B, M) to scores (B, 1).  With ``tape``
    the penalty is returned as a node on it (so it can be differentiated with
    respect to the critic's weights); otherwise as a float.
    """
    x_real = np.asarray(x_real, dtype=float)
    x_fake = np.asarray(x_fake, dtype=float)
    if x_real.shape != x_fake.shape:
        raise ValueError("real and fake batches must have the same shape")
    t = rng.uniform(size=(x_real.shape[0], 1))
    own = tape is None
    tape = ad.Tape() if own else tape
    x_hat = tape.var(t * x_real + (1.0 - t) * x_fake)
    scores = critic(x_hat)
    (g,) = tape.grad(ad.sum(scores), [x_hat], create_graph=True)
    norms = ad.l2norm(g, axis=1)
    gap = ad.sub(norms, 1.0)
    pen = ad.mul(lam, ad.mean(ad.mul(gap, gap)))
    return float(np.asarray(ad._val(pen))) if own else pen


def _sample_z(rng, n, d):
    return rng.standard_normal((n, d))


def train_wgan(table: FeatureTable, config: GanConfig | None = None, seed: int = 0, gan=None) -> GanModel:
    """Critic/generator alternation: ``n_critic`` critic updates per generator update."""
    cfg = config or GanConfig()
    gan = gan or init_gan(table, cfg, seed)
    rng = np.random.default_rng([seed, 11])
    data = gan.normalizer.normalize(table.X)
    n, B = data.shape[0], cfg.batch_size
    critic_names = gan.store.names("critic.")
    gen_names = gan.store.names("gen.")
    ema = None
    if cfg.ema > 0:
        ema = {k: gan.store[k].copy() for k in gen_names}
    lr_d = cfg.lr if cfg.lr_critic is None else cfg.lr_critic
    adam_g = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    adam_d = dict(adam_g, lr=lr_d)
    lg_hist = []
    for it in range(1, cfg.iterations + 1):
        if cfg.lr_decay:
            scale = 1.0 - (it - 1) / cfg.iterations
            adam_g["lr"], adam_d["lr"] = cfg.lr * scale, lr_d * scale
        for _ in range(gan.n_critic):
            real = data[rng.integers(0, n, size=B)]
            fake = np.asarray(gan.generate(_sample_z(rng, B, gan.latent_dim)))
            tape = ad.Tape()
            params = {**gan.store._params, **gan.store.bind(tape, critic_names)}
            critic = lambda x: gan.critic(x, params)  # noqa: E731
            pen = gradient_penalty(critic, real, fake, gan.penalty, rng, tape=tape)
            l_d = ad.add(ad.sub(ad.mean(critic(fake)), ad.mean(critic(real))), pen)
            if not np.isfinite(l_d.value):
                raise NumericError(f"non-finite critic loss at iteration {it}")
            ad.adam_step(gan.store, ad.backward(tape, l_d), **adam_d)
        tape = ad.Tape()
        params = {**gan.store._params, **gan.store.bind(tape, gen_names)}
        fake = gan.generate(_sample_z(rng, B, gan.latent_dim), params)
        l_g = ad.neg(ad.mean(gan.critic(fake, params)))
        if not np.isfinite(l_g.value):
            raise NumericError(f"non-finite generator loss at iteration {it}")
        ad.adam_step(gan.store, ad.backward(tape, l_g), **adam_g)
        if ema is not None:
            for k in gen_names:
                ema[k] = cfg.ema * ema[k] + (1.0 - cfg.ema) * gan.store[k]
        gan.steps += 1
        gan.trace.append((gan.steps, float(l_d.value), float(l_g.value)))
        lg_hist.append(float(l_g.value))
        w = cfg.early_stop_window
        if w and len(lg_hist) >= 2 * w:
            prev = abs(np.mean(lg_hist[-2 * w : -w]))
            cur = abs(np.mean(lg_hist[-w:]))
            if abs(cur - prev) < cfg.early_stop_tol:
                log.info("generator plateau at iteration %d", it)
                break
    if ema is not None:
        for k in gen_names:
            gan.store[k] = ema[k]
    return gan


def sample_synthetic(gan: GanModel, n: int, rng) -> FeatureTable:
    """``n`` generated rows in raw feature units (embeddings resampled from the training pool)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = _sample_z(rng, n, gan.latent_dim)
    X = gan.normalizer.denormalize(np.asarray(gan.generate(z)))
    E = None
    if gan.embedding_pool is not None:
        E = gan.embedding_pool[rng.integers(0, len(gan.embedding_pool), size=n)]
    return FeatureTable(gan.names, X, None, E)


def write_trace(path, gan: GanModel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "L_d", "L_g"])
        for i, a, b in gan.trace:
            w.writerow([i, repr(a), repr(b)])


# ---------------------------------------------------------------------------
# fidelity audit


@dataclass
class ComponentTest:
    component: int
    real_mean: float
    synthetic_mean: float
    t_pvalue: float
    real_var: float
    synthetic_var: float
    f_pvalue: float


@dataclass
class FidelityReport:
    components: list[ComponentTest]
    alpha: float = 0.05

    @property
    def passed(self) -> bool:
        return all(c.t_pvalue > self.alpha and c.f_pvalue > self.alpha for c in self.components)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "passed": self.passed,
            "components": [c.__dict__ for c in self.components],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path) -> None:
        """Rows as laid out in a mean/variance comparison table: one column per component."""
        cols = [f"Comp {c.component}" for c in self.components]
        rows = [
            ("Real mean", [c.real_mean for c in self.components]),
            ("Synthetic mean", [c.synthetic_mean for c in self.components]),
            ("t-test p-value", [c.t_pvalue for c in self.components]),
            ("Real variance", [c.real_var for c in self.components]),
            ("Synthetic variance", [c.synthetic_var for c in self.components]),
            ("F-test p-value", [c.f_pvalue for c in self.components]),
        ]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([""] + cols)
            for name, vals in rows:
                w.writerow([name] + [repr(float(v)) for v in vals])


def f_test(a, b) -> float:
    """Two-sided F-test p-value for equal variances."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == vb and (va == 0 or len(a) == len(b)):
        return 1.0  # F = 1 sits at the median when both sides have equal degrees of freedom
    F = vb / va if va > 0 else np.inf
    d1, d2 = len(b) - 1, len(a) - 1
    p = 2.0 * min(stats.f.cdf(F, d1, d2), stats.f.sf(F, d1, d2))
    return float(min(p, 1.0))


def fidelity_audit(real: FeatureTable, synthetic: FeatureTable, k: int = 10, alpha: float = 0.05) -> FidelityReport:
    """Project both samples on the real data's first ``k`` principal axes and test each axis.

    Columns are standardized with the real data's mean and std before PCA.
    """
    R, S = np.asarray(getattr(real, "X", real), float), np.asarray(getattr(synthetic, "X", synthetic), float)
    if R.shape[1] != S.shape[1]:
        raise ValueError("real and synthetic tables have different feature counts")
    if k < 1 or k > R.shape[1]:
        raise ValueError(f"k={k} must be between 1 and {R.shape[1]}")
    norm = Normalizer.fit(R)
    Zr, Zs = norm.normalize(R), norm.normalize(S)
    _, sv, Vt = np.linalg.svd(Zr - Zr.mean(axis=0), full_matrices=False)
    rank = int(np.sum(sv > sv[0] * max(R.shape) * np.finfo(float).eps))
    if k > rank:
        raise ValueError(f"k={k} exceeds the rank ({rank}) of the real data")
    Pr, Ps = Zr @ Vt[:k].T, Zs @ Vt[:k].T
    comps = []
    for i in range(k):
        a, b = Pr[:, i], Ps[:, i]
        if np.array_equal(a, b):
            tp = 1.0
        else:
            tp = float(stats.ttest_ind(a, b).pvalue)
        comps.append(
            ComponentTest(i + 1, float(a.mean()), float(b.mean()), tp, float(a.var(ddof=1)), float(b.var(ddof=1)), f_test(a, b))
        )
    return FidelityReport(comps, alpha)
