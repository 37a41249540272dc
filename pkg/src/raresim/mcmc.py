"""Adaptive conditional sampling for the subset chains.

The proposal keeps the standard-normal law invariant, so a candidate is
accepted simply when it lands in the current intermediate failure domain.
"""

from dataclasses import dataclass, replace

import numpy as np

TARGET_ACCEPT = 0.44


def coupling(lam, sigma_hat):
    """Per-dimension (sigma, rho) for scaling ``lam``."""
    sigma = np.minimum(1.0, lam * np.asarray(sigma_hat, dtype=float))
    rho = np.sqrt(1.0 - sigma * sigma)
    return sigma, rho


@dataclass(frozen=True)
class ProposalParams:
    lam: float
    sigma_hat: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    target_accept: float = TARGET_ACCEPT
    adapt_window: int = 10

    @classmethod
    def initial(cls, d, lam=0.6, sigma_hat=None, adapt_window=10, target_accept=TARGET_ACCEPT):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        sh = np.ones(d) if sigma_hat is None else np.asarray(sigma_hat, dtype=float)
        sigma, rho = coupling(lam, sh)
        return cls(float(lam), sh, sigma, rho, target_accept, int(adapt_window))

    def with_lambda(self, lam, sigma_hat=None):
        sh = self.sigma_hat if sigma_hat is None else np.asarray(sigma_hat, dtype=float)
        sigma, rho = coupling(lam, sh)
        return replace(self, lam=float(lam), sigma_hat=sh, sigma=sigma, rho=rho)


@dataclass
class ChainStats:
    proposals: int = 0
    accepts: int = 0

    def record(self, accepted):
        self.proposals += 1
        self.accepts += int(bool(accepted))

    @property
    def rate(self):
        return self.accepts / self.proposals if self.proposals else 0.0

    def reset(self):
        self.proposals = 0
        self.accepts = 0


def propose(current, params, rng):
    """Candidate ``rho*theta + sqrt(1 - rho^2)*z`` with ``z ~ N(0, I)``."""
    current = np.asarray(current, dtype=float)
    z = rng.normal(current.shape)
    return params.rho * current + params.sigma * z


def chain_step(current, in_F, params, rng):
    """One conditional-sampling step; no Metropolis ratio is involved."""
    v = propose(current, params, rng)
    if in_F(v):
        return v, True
    return np.asarray(current), False


def adapt(params, stats, adaptation_index):
    """Stochastic-approximation update of lambda toward the target rate."""
    if stats.proposals < 1:
        raise ValueError("cannot adapt without proposals")
    if adaptation_index < 1:
        raise ValueError("adaptation index starts at 1")
    a_hat = stats.rate
    log_lam = np.log(params.lam) + (a_hat - params.target_accept) / np.sqrt(adaptation_index)
    stats.reset()
    return params.with_lambda(float(np.exp(log_lam)))


def seed_spread(seeds):
    """Per-dimension sample std of the seeds, used as an optional base spread."""
    seeds = np.atleast_2d(seeds)
    if len(seeds) < 2:
        return np.ones(seeds.shape[1])
    s = seeds.std(axis=0, ddof=1)
    return np.where(s > 0, s, 1.0)
