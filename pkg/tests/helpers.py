"""Finite-difference oracle and synthetic data shared by the test modules."""

from __future__ import annotations

import numpy as np

from saint import autodiff as ad
from saint.data import from_arrays


def numeric_grad(fn, arrays, eps: float = 1e-6) -> list[np.ndarray]:
    """Central differences of scalar ``fn(*arrays)`` w.r.t. each float64 array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            hi = float(fn(*arrays))
            a[i] = old - eps
            lo = float(fn(*arrays))
            a[i] = old
            g[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def analytic_grad(build, arrays, dtype=np.float64) -> list[np.ndarray]:
    """Gradients from the tape for ``build(*tensors) -> scalar Tensor``."""
    ts = [ad.Tensor(np.asarray(a), requires_grad=True, dtype=dtype) for a in arrays]
    build(*ts).backward()
    return [t.grad for t in ts]


def max_rel_error(analytic, numeric) -> float:
    """Largest |analytic - numeric| relative to the largest |numeric| entry (norm-wise)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(float(np.abs(n).max()), 1e-12)
        worst = max(worst, float(np.abs(np.asarray(a, dtype=np.float64) - n).max()) / scale)
    return worst


def gradcheck(build, arrays, eps: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences, in float64."""
    with ad.default_dtype(np.float64):
        ana = analytic_grad(build, arrays)

        def value(*raw):
            with ad.no_grad():
                return build(*[ad.Tensor(r, dtype=np.float64) for r in raw]).item()

        num = numeric_grad(value, arrays, eps)
    return max_rel_error(ana, num)


def random_dataset(m=64, n_cat=2, n_cont=3, card=4, seed=0, n_classes=2):
    rng = np.random.default_rng(seed)
    return from_arrays(rng.integers(0, card, (m, n_cat)), rng.standard_normal((m, n_cont)),
                       rng.integers(0, n_classes, m), [card] * n_cat, n_classes=n_classes,
                       task="binary" if n_classes == 2 else "multiclass")


def separable_dataset(m=64, n_cont=4, seed=0):
    """Linearly separable binary data: label = [w . x > 0] with a margin."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n_cont)
    x = rng.standard_normal((m * 3, n_cont))
    s = x @ w
    keep = np.abs(s) > 0.3 * np.abs(s).std()
    x, s = x[keep][:m], s[keep][:m]
    cat = (x[:, :1] > 0).astype(np.int64) + 1
    return from_arrays(cat, x, (s > 0).astype(np.int64), [3]), w


def model_gradcheck(params, loss_fn, eps: float = 1e-6) -> float:
    """Perturb every entry of every parameter in place; compare with the tape gradients.

    ``loss_fn()`` must rebuild the loss from the current parameter values.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    ana = [p.grad.copy() for p in params]
    num = []
    with ad.no_grad():
        for p in params:
            g = np.zeros_like(p.data)
            flat, gflat = p.data.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                hi = loss_fn().item()
                flat[i] = old - eps
                lo = loss_fn().item()
                flat[i] = old
                gflat[i] = (hi - lo) / (2 * eps)
            num.append(g)
    return max_rel_error(ana, num)


def direct_row_attention(x: np.ndarray, attn) -> np.ndarray:
    """Multi-head attention across rows computed row by row, without the batched reshape."""
    b, t, d = x.shape
    rows = [x[i].reshape(-1) for i in range(b)]
    wq, wk, wv = attn.query.weight.data, attn.key.weight.data, attn.value.weight.data
    wo, bo = attn.out.weight.data, attn.out.bias.data
    dh = attn.head_dim
    out = []
    for i in range(b):
        heads = []
        for h in range(attn.heads):
            cols = slice(h * dh, (h + 1) * dh)
            q = rows[i] @ wq[:, cols]
            scores = np.array([q @ (rows[j] @ wk[:, cols]) / np.sqrt(dh) for j in range(b)])
            w = np.exp(scores - scores.max())
            w /= w.sum()
            heads.append(sum(w[j] * (rows[j] @ wv[:, cols]) for j in range(b)))
        out.append(np.concatenate(heads) @ wo + bo)
    return np.stack(out).reshape(b, t, d)


def correlated_dataset(m=128, seed=0):
    """Two latent factors drive every column, so corrupted cells are predictable from the rest."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((m, 2))
    cont = np.c_[z, z @ rng.standard_normal((2, 3))] + 0.1 * rng.standard_normal((m, 5))
    cont = (cont - cont.mean(0)) / cont.std(0)
    cat = np.c_[(z[:, 0] > 0) + 1, (z[:, 1] > 0) + 1]
    return from_arrays(cat, cont, (z[:, 0] > 0).astype(np.int64), [3, 3])
