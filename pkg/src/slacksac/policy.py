"""Squashed diagonal Student-t policy.

Actions live in (-1, 1)^dim. A pre-squash variable u is drawn from a
diagonal Student-t (location mu, scale sigma, dof nu) by the ratio-of-draws
reparameterization u = mu + sigma * gauss / sqrt(gamma_draw); the bounded
action is squash(u) = u / sqrt(u^2 + 4). log_prob is the exact density of
the squashed variable. Setting dof to inf selects the Gaussian special case
(used for ablations); the formulas below handle it exactly.

Gradients with respect to (mu, sigma, nu) are analytic. No gradient flows
through dof in the sampling path: gamma_draw is treated as data, dof learns
only through the explicit density terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .nn import ConfigurationError, squareplus, squareplus_sigmoid

SQUASH_CLAMP = 1e8
LOG4 = np.log(4.0)


def squash(u):
    """Map u to (-1, 1): 2*squareplus_sigmoid(u) - 1 = u / sqrt(u^2 + 4)."""
    u = np.asarray(u, dtype=np.float64)
    return u / np.hypot(u, 2.0)


def squash_deriv(u):
    """d squash/du = 4 / (u^2 + 4)^(3/2), always in (0, 1]."""
    u = np.asarray(u, dtype=np.float64)
    return 4.0 / np.hypot(u, 2.0) ** 3


def squash_log_det(u):
    """ln(d squash/du) = ln 4 - 1.5 ln(u^2 + 4), clamped at |u| = 1e8."""
    u = np.clip(np.asarray(u, dtype=np.float64), -SQUASH_CLAMP, SQUASH_CLAMP)
    return LOG4 - 3.0 * np.log(np.hypot(u, 2.0))


@dataclass
class PolicyHead:
    """Distribution parameters, shaped (..., action_dim).

    scale must be positive and dof either > 0 or inf (the Gaussian mode);
    mixing finite and infinite dof inside one head is not supported.
    """

    location: np.ndarray
    scale: np.ndarray
    dof: np.ndarray


@dataclass
class SampledAction:
    pre_squash: np.ndarray  # (..., action_dim)
    action: np.ndarray  # in (-1, 1)
    log_prob: np.ndarray  # (...,), summed over action dims


def head_from_raw(raw, gaussian: bool = False) -> PolicyHead:
    """Slice a raw network output (..., 3*dim) into (mu, sigma, nu).

    mu = raw, sigma = squareplus(raw), nu = 2 + squareplus(raw) so that the
    scale is positive and the variance finite. In Gaussian mode the dof
    slice is ignored and dof is set to inf.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] % 3 != 0:
        raise ConfigurationError(f"raw head width {raw.shape[-1]} not divisible by 3")
    dim = raw.shape[-1] // 3
    mu = raw[..., :dim]
    sigma = squareplus(raw[..., dim : 2 * dim])
    if gaussian:
        nu = np.full_like(mu, np.inf)
    else:
        nu = 2.0 + squareplus(raw[..., 2 * dim :])
    return PolicyHead(location=mu, scale=sigma, dof=nu)


def head_backward(raw, d_location, d_scale, d_dof) -> np.ndarray:
    """Cotangents of (mu, sigma, nu) back to the raw network output."""
    raw = np.asarray(raw, dtype=np.float64)
    dim = raw.shape[-1] // 3
    out = np.empty_like(raw)
    out[..., :dim] = d_location
    out[..., dim : 2 * dim] = d_scale * squareplus_sigmoid(raw[..., dim : 2 * dim])
    out[..., 2 * dim :] = d_dof * squareplus_sigmoid(raw[..., 2 * dim :])
    return out


def draw_noise(rng: np.random.Generator, dof):
    """Draw (gauss, gamma_draw) for sample_reparam.

    gamma_draw ~ Gamma(shape=nu/2, rate=nu/2), which has mean 1; in the
    Gaussian mode (dof inf) it is the constant 1 and no draw is consumed.
    """
    dof = np.asarray(dof, dtype=np.float64)
    gauss = rng.standard_normal(dof.shape)
    if np.all(np.isinf(dof)):
        gamma_draw = np.ones_like(gauss)
    else:
        gamma_draw = rng.gamma(dof / 2.0, 2.0 / dof)
    return gauss, gamma_draw


def sample_reparam(head: PolicyHead, noise) -> SampledAction:
    """Deterministic, differentiable sample from (head, noise).

    pre_squash = mu + sigma * gauss / sqrt(gamma_draw). dof enters only
    through the noise distribution, so the path is differentiable in
    location and scale with dof held constant.
    """
    gauss, gamma_draw = noise
    gamma_draw = np.asarray(gamma_draw, dtype=np.float64)
    if np.any(gamma_draw <= 0.0) or not np.all(np.isfinite(gamma_draw)):
        raise ConfigurationError("gamma_draw noise must be positive and finite")
    u = head.location + head.scale * np.asarray(gauss, dtype=np.float64) / np.sqrt(gamma_draw)
    return SampledAction(pre_squash=u, action=squash(u), log_prob=log_prob(head, u))


def log_prob(head: PolicyHead, pre_squash) -> np.ndarray:
    """Exact log-density of the squashed action at squash(pre_squash).

    Per dimension: Student-t log-density of u minus the squash log-det;
    summed over the last axis. The Gaussian mode replaces the t terms by
    their nu -> inf limits exactly.
    """
    u = np.asarray(pre_squash, dtype=np.float64)
    z = (u - head.location) / head.scale
    inf_mask = np.isinf(head.dof)
    nu = np.where(inf_mask, 4.0, head.dof)  # placeholder on the Gaussian lanes
    student = (
        gammaln((nu + 1.0) / 2.0)
        - gammaln(nu / 2.0)
        - 0.5 * np.log(nu * np.pi)
        - 0.5 * (nu + 1.0) * np.log1p(z * z / nu)
    )
    gaussian = -0.5 * np.log(2.0 * np.pi) - 0.5 * z * z
    per_dim = np.where(inf_mask, gaussian, student) - np.log(head.scale) - squash_log_det(u)
    return np.sum(per_dim, axis=-1)


def log_prob_partials(head: PolicyHead, pre_squash):
    """Analytic partials of the per-dimension log-density.

    Returns (d_u, d_location, d_scale, d_dof), each shaped like pre_squash.
    d_u holds (mu, sigma, nu) fixed and includes the squash-correction term;
    the reparameterization chain u = mu + sigma * z is the caller's job.
    """
    u = np.asarray(pre_squash, dtype=np.float64)
    mu, sigma = head.location, head.scale
    z = (u - mu) / sigma
    uc = np.clip(u, -SQUASH_CLAMP, SQUASH_CLAMP)
    squash_term = 3.0 * uc / (uc * uc + 4.0)

    inf_mask = np.isinf(head.dof)
    nu = np.where(inf_mask, 4.0, head.dof)
    w_t = (nu + 1.0) * z / (nu + z * z)  # t-score weight, Gaussian limit is z
    w = np.where(inf_mask, z, w_t)

    d_u = -w / sigma + squash_term
    d_location = w / sigma
    d_scale = -1.0 / sigma + w * z / sigma
    d_dof_t = (
        0.5 * (digamma((nu + 1.0) / 2.0) - digamma(nu / 2.0))
        - 0.5 / nu
        - 0.5 * np.log1p(z * z / nu)
        + (nu + 1.0) * z * z / (2.0 * nu * (nu + z * z))
    )
    d_dof = np.where(inf_mask, 0.0, d_dof_t)
    return d_u, d_location, d_scale, d_dof


def mode_action(head: PolicyHead) -> np.ndarray:
    """Deterministic action for evaluation: squash of the location."""
    return squash(head.location)
