"""Minimal reverse-mode differentiation tape for the camera-to-classifier
pipeline.

Primitives cover exactly what the end-to-end model needs: SLM rasterization,
complex field arithmetic (FFT, transfer multiply, squared modulus), PSF
normalization, scene convolution, bilinear resize, batch normalization,
rectification, affine maps, and softmax cross-entropy.

Gradients with respect to complex intermediates use the convention
``g = dL/d(Re z) + 1j * dL/d(Im z)``, under which linear complex maps pull
back through their conjugate transpose (FFT adjoints are conjugate-scaled
transforms, elementwise multiplies pull back through the conjugate factor).
"""

import numpy as np
import scipy.fft

from . import fourier, slm
from .errors import TapeIncomplete
from .utils import worker_count


class Var:
    """A tape node: a value, its accumulated gradient, and pullbacks."""

    __slots__ = ("value", "grad", "parents", "tape", "index")

    def __init__(self, value, tape, parents=()):
        self.value = value
        self.grad = None
        self.parents = parents  # tuple of (Var, pullback)
        self.tape = tape
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad = self.grad + g


class Tape:
    """Append-only record of forward operations (a Wengert list).

    Node creation order is a topological order, so one reverse sweep visits
    every node exactly once.
    """

    def __init__(self):
        self.nodes = []

    def leaf(self, value):
        return Var(np.asarray(value), self)

    def backward(self, output, seed=1.0):
        """Reverse sweep from ``output``.

        ``seed`` is the upstream gradient on ``output``: a scalar (broadcast)
        or an array of the output's shape.
        """
        if output.tape is not self or self.nodes[output.index] is not output:
            raise TapeIncomplete("output variable was not recorded on this tape")
        seed = np.asarray(seed)
        if seed.shape != np.shape(output.value):
            seed = np.broadcast_to(seed, np.shape(output.value))
        output.grad = np.array(seed, dtype=np.result_type(output.value, seed))
        for node in reversed(self.nodes[: output.index + 1]):
            if node.grad is None:
                continue
            for parent, pullback in node.parents:
                parent.accumulate(pullback(node.grad))


def add(x, y):
    return Var(x.value + y.value, x.tape, ((x, lambda g: g), (y, lambda g: g)))


def add_const(x, c):
    return Var(x.value + c, x.tape, ((x, lambda g: g),))


def scale(x, c):
    return Var(x.value * c, x.tape, ((x, lambda g: g * c),))


def average(xs):
    out = xs[0]
    for v in xs[1:]:
        out = add(out, v)
    return scale(out, 1.0 / len(xs))


def reshape(x, shape):
    orig = x.value.shape
    return Var(x.value.reshape(shape), x.tape, ((x, lambda g: g.reshape(orig)),))


def rasterize(theta, geometry, owner_row, owner_col, channel):
    """Differentiable SLM mask: ``sigmoid(theta)`` scattered onto footprints."""
    colors = np.asarray(geometry.color_pattern)
    w = slm.sigmoid(theta.value)
    mask = slm.scatter_weights(
        w.reshape(geometry.n_rows, geometry.n_cols), owner_row, owner_col,
        colors, channel,
    )
    sg = slm.sigmoid_grad(theta.value)

    def pullback(g):
        gw = slm.gather_grad(
            np.real(g), owner_row, owner_col, colors, channel,
            geometry.n_rows, geometry.n_cols,
        ).ravel()
        return gw * sg

    return Var(mask, theta.tape, ((theta, pullback),))


def mul_complex_const(x, c):
    """Multiply a real-valued var elementwise by a fixed complex field."""
    cc = np.conj(c)
    return Var(x.value * c, x.tape, ((x, lambda g: np.real(g * cc)),))


def fft2(x):
    n = x.value.shape[-2] * x.value.shape[-1]
    return Var(
        fourier.fft2(x.value), x.tape, ((x, lambda g: fourier.ifft2(g) * n),)
    )


def ifft2(x):
    n = x.value.shape[-2] * x.value.shape[-1]
    return Var(
        fourier.ifft2(x.value), x.tape, ((x, lambda g: fourier.fft2(g) / n),)
    )


def transfer_multiply(x, h):
    """Multiply a complex spectrum by a fixed transfer function."""
    hc = np.conj(h)
    return Var(x.value * h, x.tape, ((x, lambda g: g * hc),))


def square_modulus(u):
    uv = u.value
    return Var(
        uv.real**2 + uv.imag**2, u.tape, ((u, lambda g: 2.0 * uv * g),)
    )


def normalize_sum(x):
    """Scale to unit sum; gradient flows through the normalizer."""
    s = x.value.sum()
    y = x.value / s

    def pullback(g):
        return g / s - (g * y).sum() / s

    return Var(y, x.tape, ((x, pullback),))


def convolve_scenes(scenes, psf):
    """Convolve a fixed stack of scenes ``(B, H, W)`` with a PSF variable.

    Linear in the PSF; the pullback correlates the upstream gradient with
    each scene and sums over the batch.
    """
    b, h, w = scenes.shape
    big = fourier.conv_fft_shape(h, w)
    wk = worker_count()
    sf = scipy.fft.rfft2(scenes, s=big, workers=wk)
    kf = scipy.fft.rfft2(psf.value, s=big, workers=wk)
    full = scipy.fft.irfft2(sf * kf[None], s=big, workers=wk)
    out = fourier.crop_center_full_conv(full, h, w)

    def pullback(g):
        gb = np.zeros((g.shape[0],) + big, dtype=scenes.dtype)
        r0, c0 = h // 2, w // 2
        gb[:, r0 : r0 + h, c0 : c0 + w] = g
        gf = scipy.fft.rfft2(gb, s=big, workers=wk)
        acc = np.einsum("bij,bij->ij", np.conj(sf), gf)
        r = scipy.fft.irfft2(acc, s=big, workers=wk)
        return r[:h, :w].astype(np.float64)

    return Var(out, psf.tape, ((psf, pullback),))


def resize_batch(x, out_h, out_w):
    """Bilinear resize of a ``(B, H, W)`` variable; exact transpose pullback."""
    _, h, w = x.value.shape
    ry = fourier.resize_matrix(h, out_h)
    rx = fourier.resize_matrix(w, out_w)
    y = np.einsum("oh,pw,bhw->bop", ry, rx, x.value, optimize=True)

    def pullback(g):
        return np.einsum("oh,pw,bop->bhw", ry, rx, g, optimize=True)

    return Var(y, x.tape, ((x, pullback),))


def relu(x):
    mask = x.value > 0
    return Var(np.where(mask, x.value, 0.0), x.tape, ((x, lambda g: g * mask),))


def affine(x, w, b):
    """``x @ w + b`` for a batch ``(B, F)``, weights ``(F, O)``, bias ``(O,)``."""
    y = x.value @ w.value + b.value
    parents = (
        (x, lambda g: g @ w.value.T),
        (w, lambda g: x.value.T @ g),
        (b, lambda g: g.sum(axis=0)),
    )
    return Var(y, x.tape, parents)


def batch_norm(x, gamma, beta, running, momentum=0.1, eps=1e-5, train=True):
    """Per-feature batch normalization over axis 0.

    In training mode the batch statistics normalize and the running stats in
    ``running`` (dict with ``mean`` and ``var``) are updated in place as a
    side effect outside the differentiated graph; in eval mode the running
    stats normalize and nothing is updated.
    """
    xv = x.value
    if train:
        mu = xv.mean(axis=0)
        var = xv.var(axis=0)
        nb = xv.shape[0]
        running["mean"] *= 1.0 - momentum
        running["mean"] += momentum * mu
        unbiased = var * nb / max(nb - 1, 1)
        running["var"] *= 1.0 - momentum
        running["var"] += momentum * unbiased
    else:
        mu = running["mean"]
        var = running["var"]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv_std
    y = gamma.value * xhat + beta.value

    def pull_x(g):
        gxhat = g * gamma.value
        if not train:
            return gxhat * inv_std
        return inv_std * (
            gxhat
            - gxhat.mean(axis=0)
            - xhat * (gxhat * xhat).mean(axis=0)
        )

    parents = (
        (x, pull_x),
        (gamma, lambda g: (g * xhat).sum(axis=0)),
        (beta, lambda g: g.sum(axis=0)),
    )
    return Var(y, x.tape, parents)


def softmax_cross_entropy(scores, labels):
    """Mean cross-entropy over a batch of score rows; fused gradient.

    Returns ``(loss_var, probabilities)``; the gradient of the mean loss is
    ``(softmax - onehot) / B``.
    """
    sv = scores.value
    shifted = sv - sv.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    b = sv.shape[0]
    nll = shifted[np.arange(b), labels] - np.log(exp.sum(axis=1))
    loss = -nll.mean()
    delta = probs.copy()
    delta[np.arange(b), labels] -= 1.0

    def pullback(g):
        return g * delta / b

    return Var(np.float64(loss), scores.tape, ((scores, pullback),)), probs


def backward_optics(tape, output, upstream, theta):
    """Gradient of an optics forward pass with respect to the SLM weights.

    Seeds ``output`` with ``upstream`` and runs the reverse sweep, returning
    ``theta``'s accumulated gradient (zeros if nothing reached it).
    """
    if theta.tape is not tape:
        raise TapeIncomplete("theta does not belong to this tape")
    tape.backward(output, seed=upstream)
    if theta.grad is None:
        return np.zeros_like(theta.value)
    return theta.grad
