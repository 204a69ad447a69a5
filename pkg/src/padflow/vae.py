"""Small VAE with a flow prior over a padded latent space.

Two equivalent ways of injecting padding-dimensional noise into the latent:
padding the Gaussian parameters directly (sigma' = sqrt(sigma^2 + a^2) on data
dims) or the fused reparameterization (sigma' = sigma + a). They coincide at
a = 0, which is the default; both are kept so the equivalence is testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, Mlp, Tensor, concat
from .dequant import PaddingNoiseConfig
from .errors import NumericError, UsageError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class LatentParams:
    """Per-item diagonal Gaussian emitted by the encoder; both fields are
    (n, d) Tensors on the tape and sigma is strictly positive."""

    mu: Tensor
    sigma: Tensor


class VaeModel:
    """Encoder MLP -> (mu, log sigma); decoder MLP on the stripped latent;
    flow prior over latent_dim + p dims."""

    def __init__(self, encoder, decoder, prior, noise):
        self.encoder = encoder
        self.decoder = decoder
        self.prior = prior
        self.noise = noise
        self.latent_dim = prior.data_dim
        if prior.pad_dim != noise.p:
            raise UsageError("prior padding dims disagree with the noise config")

    def parameters(self):
        return (
            self.encoder.parameters()
            + self.decoder.parameters()
            + self.prior.parameters()
        )


def encode(model, images):
    """Run the encoder on (n, pixels) images in [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    if images.min() < 0 or images.max() > 1:
        raise UsageError("pixel values must lie in [0, 1]")
    out = model.encoder(Tensor(images))
    if not np.all(np.isfinite(out.data)):
        raise NumericError("encoder produced non-finite output")
    d = model.latent_dim
    mu = out[:, :d]
    sigma = out[:, d:].exp()
    return LatentParams(mu=mu, sigma=sigma)


def reparameterize(lp, rng=None, eps=None):
    """x = mu + sigma * eps with eps ~ N(0, I)."""
    if eps is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        eps = rng.standard_normal(lp.mu.shape)
    return lp.mu + lp.sigma * np.asarray(eps, dtype=np.float64)


def pad_params_direct(lp, cfg):
    """Padded-parameter form: mu' = (mu, 0_p), sigma' data dims combine the
    encoder sigma and the data noise in quadrature, padding dims are b."""
    n = lp.mu.shape[0]
    mu_pad = concat([lp.mu, np.zeros((n, cfg.p))], axis=1)
    sigma_data = (lp.sigma.square() + cfg.a**2).sqrt()
    sigma_pad = concat([sigma_data, np.full((n, cfg.p), cfg.b)], axis=1)
    return LatentParams(mu=mu_pad, sigma=sigma_pad)


def pf_reparameterize(lp, cfg, rng=None, eps=None):
    """Fused padded sampling: sigma' = (sigma + a, b 1_p), single normal draw
    over d + p dims. Data-dim std is sigma + a (additive), which differs from
    pad_params_direct's sqrt(sigma^2 + a^2) whenever a > 0."""
    n, d = lp.mu.shape
    mu_pad = concat([lp.mu, np.zeros((n, cfg.p))], axis=1)
    sigma_pad = concat([lp.sigma + cfg.a, np.full((n, cfg.p), cfg.b)], axis=1)
    if eps is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        eps = rng.standard_normal((n, d + cfg.p))
    return mu_pad + sigma_pad * np.asarray(eps, dtype=np.float64)


def gaussian_entropy(sigma):
    """Diagonal-Gaussian differential entropy per row:
    sum_i log sigma_i + (d / 2)(1 + log 2 pi)."""
    if not isinstance(sigma, Tensor):
        sigma = Tensor(sigma)
    d = sigma.shape[-1]
    axis = -1 if sigma.ndim else None
    return sigma.log().sum(axis=axis) + 0.5 * d * (1.0 + LOG_2PI)


def _soft_clamp(x, limit):
    return limit * (x * (1.0 / limit)).tanh()


def bernoulli_nll(logits, targets, clamp=15.0):
    """Per-image Bernoulli cross-entropy from logits, summed over pixels.
    Logits are smoothly clamped to |logit| <= clamp."""
    z = _soft_clamp(logits, clamp)
    targets = np.asarray(targets, dtype=np.float64)
    return (z.softplus() - z * targets).sum(axis=1)


def elbo_loss(model, images, rng=None, eps=None, full_entropy=False):
    """Negative ELBO: reconstruction cross-entropy minus the latent term
    (flow log-density of the padded latent plus the encoder entropy).

    ``full_entropy`` switches the entropy term from the data-dim shortcut to
    the full padded Gaussian; the padding dims only add a constant, so the
    gradients agree.
    """
    images = np.asarray(images, dtype=np.float64)
    lp = encode(model, images)
    x_pad = pf_reparameterize(lp, model.noise, rng=rng, eps=eps)
    x_data = x_pad[:, : model.latent_dim]
    logits = model.decoder(x_data)
    recon = bernoulli_nll(logits, images)
    prior_lp = model.prior.log_prob(x_pad)
    sigma_eff = lp.sigma + model.noise.a
    if full_entropy:
        n = images.shape[0]
        sigma_eff = concat(
            [sigma_eff, np.full((n, model.noise.p), model.noise.b)], axis=1
        )
    latent = prior_lp + gaussian_entropy(sigma_eff)
    return (recon - latent).mean()


def decode(model, latent):
    """Decoder probabilities for a (n, latent_dim) latent (padding stripped
    by the caller if present)."""
    if not isinstance(latent, Tensor):
        latent = Tensor(np.asarray(latent, dtype=np.float64))
    return _soft_clamp(model.decoder(latent), 15.0).sigmoid()


# -- toy image data ---------------------------------------------------------

IMAGE_SIDE = 8
N_PIXELS = IMAGE_SIDE * IMAGE_SIDE


def toy_images(n, seed=0):
    """(images, labels): n binary 8x8 images from four procedural classes
    (horizontal bar, vertical bar, cross, 3x3 blob), flattened to 64 pixels."""
    rng = np.random.default_rng(seed)
    images = np.zeros((n, IMAGE_SIDE, IMAGE_SIDE))
    labels = rng.integers(0, 4, size=n)
    for i, cls in enumerate(labels):
        if cls == 0:
            images[i, rng.integers(1, 7), :] = 1.0
        elif cls == 1:
            images[i, :, rng.integers(1, 7)] = 1.0
        elif cls == 2:
            r, c = rng.integers(2, 6, size=2)
            images[i, r, :] = 1.0
            images[i, :, c] = 1.0
        else:
            r, c = rng.integers(0, 6, size=2)
            images[i, r:r + 3, c:c + 3] = 1.0
    return images.reshape(n, N_PIXELS), labels


def build_vae(latent_dim=4, noise=None, enc_hidden=64, dec_hidden=64,
              flow_steps=2, flow_hidden=32, seed=0):
    """Assemble the default toy-image VAE."""
    from .flows import build_flow

    noise = noise if noise is not None else PaddingNoiseConfig(p=2, a=0.0, b=2.0)
    rng = np.random.default_rng(seed)
    encoder = Mlp([N_PIXELS, enc_hidden, 2 * latent_dim], "softplus", rng=rng)
    # Zero-init the encoder head so training starts at mu = 0, sigma = 1.
    encoder.weights[-1].data[:] = 0.0
    decoder = Mlp([latent_dim, dec_hidden, N_PIXELS], "softplus", rng=rng)
    prior = build_flow(
        latent_dim, pad_dim=noise.p, cond_dim=0, steps=flow_steps,
        hidden=flow_hidden, depth=2, seed=seed + 1,
    )
    for layer in prior.layers:
        if hasattr(layer, "init_identity"):
            layer.init_identity()
    return VaeModel(encoder, decoder, prior, noise)


def train_vae(model, images, steps, batch_size=64, lr=1e-3, seed=0, callback=None):
    """Adam training on shuffled minibatches; returns the per-step loss list."""
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters(), lr=lr)
    losses = []
    n = images.shape[0]
    for step in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        opt.zero_grad()
        loss = elbo_loss(model, images[idx], rng=rng)
        if not np.isfinite(loss.data):
            raise NumericError(f"VAE loss diverged at step {step}")
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
        if callback is not None:
            callback(step, losses[-1])
    return losses
