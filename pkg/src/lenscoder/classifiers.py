"""Classifier heads (multinomial logistic regression and a single-hidden-
layer 800-unit network with batch normalization), cross-entropy loss, and
the Adam optimizer.

Parameters are plain dicts of numpy arrays so they serialize through the
tensor format; batch-norm running statistics live in a separate dict and
are frozen at inference.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

N_CLASSES = 10
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def cross_entropy(scores, label):
    """Cross-entropy loss and gradient for one score vector or a batch.

    Log-sum-exp stabilized; the gradient is ``softmax(scores) - onehot``.
    For a batch the loss is the mean and the gradient is divided by the
    batch size.
    """
    scores = np.asarray(scores, dtype=np.float64)
    single = scores.ndim == 1
    s = scores[None, :] if single else scores
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    shifted = s - s.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    losses = logsumexp - shifted[np.arange(s.shape[0]), labels]
    probs = np.exp(shifted - logsumexp[:, None])
    grad = probs.copy()
    grad[np.arange(s.shape[0]), labels] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / s.shape[0]


def init_logistic(input_dim, rng):
    scale = 1.0 / np.sqrt(input_dim)
    return {
        "w": rng.normal(0.0, scale, size=(input_dim, N_CLASSES)),
        "b": np.zeros(N_CLASSES),
    }


def init_fcnn(input_dim, rng, hidden=800):
    return {
        "w1": rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(input_dim, hidden)),
        "b1": np.zeros(hidden),
        "gamma": np.ones(hidden),
        "beta": np.zeros(hidden),
        "w2": rng.normal(0.0, np.sqrt(2.0 / hidden), size=(hidden, N_CLASSES)),
        "b2": np.zeros(N_CLASSES),
    }


def init_running(dim):
    return {"mean": np.zeros(dim), "var": np.ones(dim)}


def forward_classifier(params, embedding, mode="eval", running=None):
    """Scores for a batch of embeddings through either classifier head.

    The head is inferred from the parameter keys: ``w``/``b`` is logistic
    (flatten, affine); ``w1``...``w2`` is the hidden-layer network (flatten,
    affine, batch norm, rectify, affine). In train mode batch statistics
    normalize and the running stats are updated; in eval mode the frozen
    running stats are used, so repeated calls are deterministic.
    """
    x = np.asarray(embedding, dtype=np.float64)
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    if "w" in params:
        if x.shape[1] != params["w"].shape[0]:
            raise DimensionMismatch(
                f"embedding dim {x.shape[1]} != weight rows {params['w'].shape[0]}"
            )
        return x @ params["w"] + params["b"]
    if x.shape[1] != params["w1"].shape[0]:
        raise DimensionMismatch(
            f"embedding dim {x.shape[1]} != weight rows {params['w1'].shape[0]}"
        )
    pre = x @ params["w1"] + params["b1"]
    if mode == "train":
        mu = pre.mean(axis=0)
        var = pre.var(axis=0)
        if running is not None:
            nb = pre.shape[0]
            running["mean"] *= 1.0 - BN_MOMENTUM
            running["mean"] += BN_MOMENTUM * mu
            running["var"] *= 1.0 - BN_MOMENTUM
            running["var"] += BN_MOMENTUM * var * nb / max(nb - 1, 1)
    else:
        if running is None:
            raise ValueError("eval mode needs running statistics")
        mu, var = running["mean"], running["var"]
    xhat = (pre - mu) / np.sqrt(var + BN_EPS)
    hidden = np.maximum(params["gamma"] * xhat + params["beta"], 0.0)
    return hidden @ params["w2"] + params["b2"]


@dataclass
class AdamState:
    """Bias-corrected Adam state over a named parameter dict."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads):
        """One update; returns the new parameter dict."""
        self.t += 1
        out = {}
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                out[name] = p
                continue
            if g.shape != p.shape:
                raise DimensionMismatch(f"{name}: grad {g.shape} != param {p.shape}")
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / (1.0 - self.beta1**self.t)
            vhat = v / (1.0 - self.beta2**self.t)
            out[name] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def adam_step(state, params, grads):
    """Functional wrapper over ``AdamState.step``."""
    return state.step(params, grads)
