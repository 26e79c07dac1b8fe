"""The four-component predictor and its ReLU output head.

Parameter names in the store::

    pw.w, pw.b                      piecewise (wide) linear part
    att.w, att.b, att.h, att.out    attention over pairwise products
    nh.W{l}, nh.b{l}, nh.out        higher-order ReLU network
    uc.head                         linear head on a per-sample embedding
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .data import FeatureTable, Normalizer
from .encoders import Encoder, fit_piecewise

COMPONENTS = ("piecewise", "second_order", "higher_order", "unstructured")


@dataclass
class ModelConfig:
    encoder: str = "piecewise"
    gamma: int = 10
    piecewise: bool = True
    second_order: bool = True
    higher_order: bool = True
    unstructured: bool = True
    attention: bool = True
    layers: int = 3
    width: int = 16
    init: str = "uniform"  # or "zeros"


@dataclass
class Inputs:
    """Per-row constants derived from raw features (no parameters involved)."""

    phi: np.ndarray  # encoded features for the wide part
    z: np.ndarray  # z-normalized features
    s: np.ndarray  # ordered pairwise products of z, shape (N, M*M)
    e: np.ndarray | None = None

    def __len__(self):
        return self.phi.shape[0]

    def rows(self, idx) -> "Inputs":
        return Inputs(
            self.phi[idx], self.z[idx], self.s[idx], None if self.e is None else self.e[idx]
        )


@dataclass
class PiWadModel:
    encoder: Encoder
    normalizer: Normalizer
    store: ParamStore
    toggles: dict
    layers: int
    width: int
    embed_dim: int | None = None
    binary: np.ndarray | None = None
    fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.encoder.spec.names)

    @property
    def m(self) -> int:
        return self.encoder.spec.n_features

    @property
    def embedding_enabled(self) -> bool:
        return self.embed_dim is not None and self.toggles.get("unstructured", False)

    def inputs(self, X, E=None) -> Inputs:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.m:
            raise ValueError(f"expected {self.m} features, got {X.shape[1]}")
        z = self.normalizer.normalize(X)
        s = (z[:, :, None] * z[:, None, :]).reshape(len(z), -1)
        if self.embedding_enabled:
            if E is None:
                raise ValueError("model expects an embedding for every sample")
            E = np.asarray(E, dtype=float)
            if E.ndim == 1:
                E = E[None, :]
            if E.shape != (X.shape[0], self.embed_dim):
                raise ValueError(
                    f"embedding shape {E.shape} != ({X.shape[0]}, {self.embed_dim})"
                )
        else:
            E = None
        return Inputs(self.encoder(X), z, s, E)

    def param_names(self) -> list[str]:
        """Names of the parameters that take part in the forward pass."""
        t = self.toggles
        names = []
        if t["piecewise"]:
            names += ["pw.w", "pw.b"]
        if t["second_order"]:
            names += ["att.out"] + (["att.w", "att.b", "att.h"] if t["attention"] else [])
        if t["higher_order"]:
            for i in range(self.layers):
                names += [f"nh.W{i}", f"nh.b{i}"]
            names.append("nh.out")
        if self.embedding_enabled:
            names.append("uc.head")
        return names

    def parts(self, inp: Inputs, params=None) -> dict:
        """Component outputs (each (N, 1)) and the ReLU head output under ``params``."""
        p = self.store if params is None else params
        n = len(inp)
        t = self.toggles
        zero = np.zeros((n, 1))
        out = {}
        out["piecewise"] = (
            ad.add(ad.matmul(inp.phi, p["pw.w"]), p["pw.b"]) if t["piecewise"] else zero
        )
        out["second_order"] = attention_output(p, inp.s, t["attention"]) if t["second_order"] else zero
        if t["higher_order"]:
            h = inp.z
            for i in range(self.layers):
                h = ad.relu(ad.add(ad.matmul(h, p[f"nh.W{i}"]), p[f"nh.b{i}"]))
            out["higher_order"] = ad.matmul(h, p["nh.out"])
        else:
            out["higher_order"] = zero
        out["unstructured"] = ad.matmul(inp.e, p["uc.head"]) if self.embedding_enabled else zero
        total = ad.add(
            ad.add(out["piecewise"], out["second_order"]),
            ad.add(out["higher_order"], out["unstructured"]),
        )
        out["output"] = ad.relu(total)
        return out

    def predict(self, X, E=None) -> np.ndarray:
        return np.asarray(self.parts(self.inputs(X, E))["output"]).reshape(-1)


def attention_output(p, s, use_attention=True):
    """Attention-weighted sum of the pairwise products ``s`` (N, M*M) -> (N, 1)."""
    if use_attention:
        u = ad.tanh(ad.add(ad.mul(s, p["att.w"]), p["att.b"]))
        a = ad.softmax(ad.mul(u, p["att.h"]), axis=1)
    else:
        a = np.full(np.shape(s), 1.0 / np.shape(s)[1])
    return ad.mul(ad.sum(ad.mul(a, s), axis=1, keepdims=True), p["att.out"])


def attention_weights(model: PiWadModel, x) -> np.ndarray:
    """Attention map a_(j,j') for each row, shape (N, M, M)."""
    inp = model.inputs(x, _dummy_e(model, x))
    m = model.m
    if not model.toggles["attention"]:
        return np.full((len(inp), m, m), 1.0 / (m * m))
    p = model.store
    u = np.tanh(p["att.w"] * inp.s + p["att.b"])
    a = ad.softmax(u * p["att.h"], axis=1)
    return a.reshape(len(inp), m, m)


def _uniform(rng, shape, fan_in, zeros):
    if zeros:
        return np.zeros(shape)
    r = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-r, r, size=shape)


def init_model(
    table: FeatureTable, config: ModelConfig | None = None, seed: int = 0, embed_dim=None
) -> PiWadModel:
    """Fit the encoder and normalization on ``table`` and draw initial parameters.

    The wide bias starts at the mean training target so that the ReLU head
    begins in its active region.
    """
    cfg = config or ModelConfig()
    rng = np.random.default_rng(seed)
    spec = fit_piecewise(table.X, cfg.gamma, table.names)
    enc = Encoder(cfg.encoder, spec)
    zeros = cfg.init == "zeros"
    m = table.m
    if embed_dim is None and table.embeddings is not None:
        embed_dim = table.embeddings.shape[1]
    store = ParamStore()
    store.add("pw.w", _uniform(rng, (enc.width, 1), enc.width, zeros))
    b0 = float(np.mean(table.target)) if table.target is not None and not zeros else 0.0
    store.add("pw.b", np.array(b0))
    for k in ("att.w", "att.b", "att.h", "att.out"):
        store.add(k, _uniform(rng, (), 1, zeros))
    fan = m
    for i in range(cfg.layers):
        store.add(f"nh.W{i}", _uniform(rng, (fan, cfg.width), fan, zeros))
        store.add(f"nh.b{i}", _uniform(rng, (cfg.width,), fan, zeros))
        fan = cfg.width
    store.add("nh.out", _uniform(rng, (fan, 1), fan, zeros))
    if embed_dim is not None:
        store.add("uc.head", _uniform(rng, (embed_dim, 1), embed_dim, zeros))
    toggles = {
        "piecewise": cfg.piecewise,
        "second_order": cfg.second_order,
        "higher_order": cfg.higher_order,
        "unstructured": cfg.unstructured and embed_dim is not None,
        "attention": cfg.attention,
    }
    return PiWadModel(
        encoder=enc,
        normalizer=Normalizer.fit(table.X),
        store=store,
        toggles=toggles,
        layers=cfg.layers,
        width=cfg.width,
        embed_dim=embed_dim,
        binary=table.binary.copy(),
    )


# single-component views


def forward_piecewise(model: PiWadModel, x) -> np.ndarray:
    inp = model.inputs(x, _dummy_e(model, x))
    return _squeeze(ad.add(ad.matmul(inp.phi, model.store["pw.w"]), model.store["pw.b"]))


def forward_attention(model: PiWadModel, x):
    """Second-order output and the attention map for each row."""
    inp = model.inputs(x, _dummy_e(model, x))
    y = attention_output(model.store, inp.s, model.toggles["attention"])
    return _squeeze(y), attention_weights(model, x)


def forward_higher(model: PiWadModel, x) -> np.ndarray:
    inp = model.inputs(x, _dummy_e(model, x))
    h = inp.z
    for i in range(model.layers):
        h = np.maximum(h @ model.store[f"nh.W{i}"] + model.store[f"nh.b{i}"], 0.0)
    return _squeeze(h @ model.store["nh.out"])


def forward_embed(model: PiWadModel, e) -> np.ndarray:
    if model.embed_dim is None:
        raise ValueError("model has no embedding head")
    e = np.asarray(e, dtype=float)
    if e.shape[-1] != model.embed_dim:
        raise ValueError(f"embedding length {e.shape[-1]} != {model.embed_dim}")
    return _squeeze(np.atleast_2d(e) @ model.store["uc.head"])


def predict(model: PiWadModel, x, e=None):
    out = model.predict(x, e)
    return float(out[0]) if np.ndim(x) == 1 else out


def _squeeze(y):
    y = np.asarray(y).reshape(-1)
    return float(y[0]) if y.size == 1 else y


def _dummy_e(model, x):
    if not model.embedding_enabled:
        return None
    return np.zeros((np.atleast_2d(x).shape[0], model.embed_dim))
