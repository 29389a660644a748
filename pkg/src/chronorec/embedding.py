"""Attribute-based item embedding, its decoder and the reconstruction loss.

Items are binary attribute vectors ``z`` (length m).  The embedding matrix
``E`` (d x m) maps them to ``e = E z``.  The decoder is one affine layer with a
tanh, ``dec = tanh(Wg e + bg)``, followed by an attribute-wise sigmoid,
``zhat_j = sigmoid(eta_j . dec)``.

All functions work on plain arrays and on tape variables alike.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .data import ItemCatalog

EPS = 1e-12
INIT_RANGE = 0.05


def block_mask(catalog: ItemCatalog, per_attribute_dim: int) -> np.ndarray:
    """0/1 mask for grouped encoding: each attribute namespace owns its own
    ``per_attribute_dim`` rows of E, so the item embedding is the concatenation
    of per-namespace embeddings."""
    groups = catalog.groups()
    mask = np.zeros((per_attribute_dim * len(groups), catalog.n_attributes))
    for g, (_, cols) in enumerate(groups):
        mask[g * per_attribute_dim : (g + 1) * per_attribute_dim, cols] = 1.0
    return mask


def init_embedding(
    m: int, d: int, rng: np.random.Generator, mask: np.ndarray | None = None
) -> dict[str, np.ndarray]:
    a = INIT_RANGE
    E = rng.uniform(-a, a, size=(d, m))
    if mask is not None:
        E = E * mask
    return {
        "E": E,
        "Wg": rng.uniform(-a, a, size=(d, d)),
        "bg": rng.uniform(-a, a, size=(d, 1)),
        "eta": rng.uniform(-a, a, size=(m, d)),
    }


def embed(catalog: ItemCatalog, E) -> np.ndarray:
    """Item embedding table, one row ``e_i = E z_i`` per catalog item."""
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[1] != catalog.n_attributes:
        from .errors import ConfigError

        raise ConfigError(
            f"embedding matrix {E.shape} does not match {catalog.n_attributes} attributes"
        )
    return catalog.matrix @ E.T


def embed_columns(E, z_cols):
    """``E @ Z^T``: embeddings of the given items as columns (d x n)."""
    return ad.matmul(E, z_cols)


def decode(emb_cols, params):
    """Reconstructed attribute probabilities (m x n) for embedding columns."""
    n = ad._as_array(emb_cols).shape[1]
    bias = ad.matmul(params["bg"], np.ones((1, n)))
    hidden = ad.tanh(ad.add(ad.matmul(params["Wg"], emb_cols), bias))
    return ad.sigmoid(ad.matmul(params["eta"], hidden))


def embedding_loss(z_rows: np.ndarray, params, mode: str = "bce"):
    """Negative log-likelihood of the attribute reconstruction.

    ``mode="active"`` penalises only active attributes; ``mode="bce"`` adds the
    complementary term for inactive ones so that ``zhat -> 1`` is not a
    minimiser.
    """
    if mode not in ("bce", "active"):
        raise ValueError(f"unknown embedding loss mode {mode!r}")
    zt = np.ascontiguousarray(z_rows.T)
    probs = ad.clip(decode(embed_columns(params["E"], zt), params), EPS, 1.0 - EPS)
    loss = ad.scale(ad.sum(ad.mul(zt, ad.log(probs))), -1.0)
    if mode == "bce":
        neg = ad.log(ad.sub(1.0, probs))
        loss = ad.sub(loss, ad.sum(ad.mul(1.0 - zt, neg)))
    return loss


def reconstruction_accuracy(z_rows: np.ndarray, params) -> float:
    """Fraction of attributes with ``(zhat > 0.5) == (z == 1)``."""
    probs = decode(embed_columns(params["E"], z_rows.T), params)
    return float(np.mean((probs > 0.5) == (z_rows.T > 0.5)))
