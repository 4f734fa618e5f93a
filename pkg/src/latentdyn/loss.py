"""Training objective: reconstruction, KL to the prior, and a
total-correlation penalty estimated over each subject's timesteps.
"""

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor

_LOG_2PI = float(np.log(2.0 * np.pi))

BETA_SWEEP = (0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass
class LossBreakdown:
    recon: float
    kl: float
    tc: float
    beta: float
    total: float


def kl_to_standard_normal(mu, log_sigma):
    """Mean over timesteps and factor dims of the closed-form Gaussian KL."""
    var = (log_sigma * 2.0).exp()
    per_elem = (mu * mu + var + (-2.0) * log_sigma - 1.0) * 0.5
    return per_elem.mean(axis=1).mean(axis=0)


def reconstruction_loss(x, xhat):
    """Sum over timesteps of the per-vertex mean squared error."""
    if x.dims != xhat.dims:
        raise ValueError(f"shape mismatch: {x.dims} vs {xhat.dims}")
    diff = x - xhat
    return (diff * diff).mean(axis=1).sum(axis=0)


def _log_densities(z, mu, log_sigma):
    """log q(z_t,j | x_s) for every (t, s, j): a [T, T, J] tensor.

    Row t holds the sampled z_t evaluated under all T posteriors s of the
    same subject.
    """
    t_steps, j = z.dims
    z_e = z.reshape(t_steps, 1, j).expand_axis(1, t_steps)
    mu_e = mu.reshape(1, t_steps, j).expand_axis(0, t_steps)
    ls_e = log_sigma.reshape(1, t_steps, j).expand_axis(0, t_steps)
    inv_sigma = (-ls_e).exp()
    norm = (z_e - mu_e) * inv_sigma
    return (norm * norm + _LOG_2PI) * (-0.5) - ls_e


def total_correlation(mu, log_sigma, z):
    """Timestep-aggregated estimate of KL(q(z) || prod_j q(z_j)).

    The subject's own T posteriors form the support set of the aggregated
    posterior; both the joint and the per-dimension marginals subtract the
    same log T, so a single-factor model has TC identically zero.
    """
    t_steps, j = z.dims
    if t_steps < 2:
        raise ValueError("total correlation needs at least 2 timesteps")
    log_q = _log_densities(z, mu, log_sigma)  # [T, T, J]
    log_t = float(np.log(t_steps))
    # log q(z_t) = logsumexp_s sum_j log q(z_t,j | x_s) - log T
    joint = log_q.sum(axis=2).logsumexp(axis=1) - log_t  # [T]
    # sum_j log q(z_t,j) = sum_j (logsumexp_s log q(z_t,j | x_s) - log T)
    dimwise = log_q.logsumexp(axis=1).sum(axis=1) - j * log_t  # [T]
    return (joint - dimwise).mean(axis=0)


def objective(x, xhat, factors, beta):
    """Combine the three terms; beta weights only the TC penalty.

    Returns (total: Tensor, LossBreakdown of detached floats). At beta = 0
    the TC estimate is reported but kept out of the optimized total.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    recon = reconstruction_loss(x, xhat)
    kl = kl_to_standard_normal(factors.mu, factors.log_sigma)
    tc = total_correlation(factors.mu, factors.log_sigma, factors.z)
    total = recon + kl
    if beta > 0:
        total = total + tc * beta
    breakdown = LossBreakdown(recon=recon.item(), kl=kl.item(), tc=tc.item(),
                              beta=float(beta),
                              total=recon.item() + kl.item()
                              + float(beta) * tc.item())
    return total, breakdown
