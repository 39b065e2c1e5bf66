"""Empirical measures: histograms, Birkhoff statistics, W1, stability.

Physical measures come from pooling long deterministic orbits over many
uniform starts; stationary measures do the same along random orbits,
which is the Monte Carlo realization of the Cesaro push-forward
sequence (1/n) sum_j (f_x^j)_* theta_eps^N.  Weak* closeness is probed
at fixed bin resolution through the W1 distance of the histograms.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import maps
from ._streams import (TAG_BITS, TAG_NOISE, TAG_X0, CHUNK, run_chunked,
                       substream)
from .errors import BinMismatch, ConfigError, DomainExit

N_ERROR_BATCHES = 10


@dataclass
class EmpiricalMeasure:
    """Normalized histogram over the map's domain."""

    domain: maps.Domain
    bins: int
    weights: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.bins < 2 or len(self.weights) != self.bins:
            raise ConfigError("need at least 2 bins and matching weights")
        if np.any(self.weights < 0):
            raise ConfigError("weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigError("weights must sum to 1 within 1e-12")

    @property
    def bin_width(self):
        return self.domain.length / self.bins

    @property
    def bin_centers(self):
        return self.domain.lower + (np.arange(self.bins) + 0.5) * self.bin_width

    @classmethod
    def from_counts(cls, domain, counts, dropped=0):
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise ConfigError("empty histogram")
        return cls(domain=domain, bins=len(counts), weights=counts / total,
                   dropped=dropped)

    @classmethod
    def uniform(cls, domain, bins):
        return cls(domain=domain, bins=bins, weights=np.full(bins, 1.0 / bins))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_center", "weight"])
            for c, wt in zip(self.bin_centers, self.weights):
                w.writerow([repr(float(c)), repr(float(wt))])


@dataclass
class StabilityCurve:
    epsilons: np.ndarray
    distances: np.ndarray
    mc_error: float

    def __post_init__(self):
        self.epsilons = np.asarray(self.epsilons, dtype=float)
        self.distances = np.asarray(self.distances, dtype=float)
        if np.any(np.diff(self.epsilons) >= 0):
            raise ConfigError("epsilons must be strictly descending")
        if np.any(self.distances < 0):
            raise ConfigError("distances must be non-negative")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "w1", "mc_error"])
            for e, d in zip(self.epsilons, self.distances):
                w.writerow([repr(float(e)), repr(float(d)), repr(float(self.mc_error))])


# ---------------------------------------------------------------------------
# Birkhoff statistics


def birkhoff_average(trace, observable):
    """Mean of the observable over points[0..N-1] of a trace."""
    if trace.N < 1:
        raise ConfigError("trace too short")
    return float(np.mean(observable(trace.points[:trace.N])))


def lyapunov(m, x0, N):
    """Birkhoff average of log|Df| along the orbit of x0."""
    from .hyptimes import trace_orbit
    tr = trace_orbit(m, x0, N, delta=1.0)
    return float(np.mean(-tr.log_inv_deriv))


def slow_recurrence_average(trace, delta=None):
    """Mean of -log d_delta along the trace (delta defaults to the
    trace's own truncation level)."""
    if delta is None or delta == trace.delta:
        return float(np.mean(-trace.log_trunc_dist)) if trace.N else 0.0
    raise ConfigError("trace was recorded at a different delta")


# ---------------------------------------------------------------------------
# histogram engine


def _ensemble_histogram(m, N, samples, bins, burn_in, seed, pert=None,
                        epsilon=0.0, threads=None, n_batches=N_ERROR_BATCHES,
                        block=4096):
    """Pooled orbit histogram; returns (batch_counts, dropped).

    batch_counts is (n_batches, bins) int64; summing gives the full
    histogram.  Work is chunked by sample index and merged in chunk
    order, so the result is bit-identical for any thread count.
    """
    if burn_in >= N:
        raise ConfigError("burn_in must be below N")
    dom = m.domain
    x0_all = substream(seed, TAG_X0).uniform(dom.lower, dom.upper, size=samples)
    inv_w = bins / dom.length
    chunk = max(1, -(-samples // n_batches))  # >= n_batches chunks when possible

    def work(ci, a, b):
        S = b - a
        counts = np.zeros(bins, dtype=np.int64)
        dropped = 0
        x = dom.reduce(x0_all[a:b]).copy()
        alive = np.ones(S, dtype=bool)
        if m.dyadic_bits:
            u = maps.mantissa_state(x)
            bitgen = substream(seed, TAG_BITS, ci)
            x = dom.lower + (u / float(1 << 53)) * dom.length
        if pert is not None:
            noise_gens = [substream(seed, TAG_NOISE, i) for i in range(a, b)]
        tol = m.tol_crit
        j = 0
        while j < N:
            nb = min(block, N - j)
            if pert is not None:
                tblock = np.stack([g.uniform(-epsilon, epsilon, size=nb)
                                   for g in noise_gens])
            if m.dyadic_bits:
                bits = bitgen.integers(0, 2, size=(nb, S), dtype=np.int64)
            for t in range(nb):
                if m.critical_points.size:
                    d = m.dist_to_critical(x)
                    newdead = alive & (d < tol)
                    if newdead.any():
                        dropped += int(newdead.sum())
                        alive &= ~newdead
                base = dom.reduce(m.raw(x))
                if pert is not None:
                    drift = tblock[:, t] * pert.zeta_many(x)
                    base = base + drift
                    if dom.kind == "interval":
                        bad = alive & ((base < dom.lower) | (base > dom.upper))
                        if bad.any():
                            raise DomainExit(
                                f"{m.name}: perturbed orbit left the interval domain")
                if m.dyadic_bits:
                    u = ((u << 1) & ((1 << 53) - 1)) | bits[t]
                    if pert is None:
                        base = dom.lower + (u / float(1 << 53)) * dom.length
                    else:
                        base = dom.reduce(base + bits[t] * dom.length / float(1 << 53))
                x = dom.reduce(base)
                jj = j + t + 1
                if jj >= burn_in:
                    idx = np.clip(((x - dom.lower) * inv_w).astype(np.int64), 0, bins - 1)
                    counts += np.bincount(idx[alive], minlength=bins)
            j += nb
        return counts, dropped

    parts = run_chunked(samples, work, threads=threads, chunk=chunk)
    batch_counts = np.zeros((n_batches, bins), dtype=np.int64)
    dropped = 0
    for ci, (counts, drp) in enumerate(parts):
        batch_counts[ci % n_batches] += counts
        dropped += drp
    return batch_counts, dropped


def physical_measure(m, N, samples, bins, burn_in, seed, threads=None):
    """Histogram of points[burn_in..N] pooled over uniform starts."""
    batch_counts, dropped = _ensemble_histogram(
        m, N, samples, bins, burn_in, seed, threads=threads)
    return EmpiricalMeasure.from_counts(m.domain, batch_counts.sum(axis=0),
                                        dropped=dropped)


def stationary_measure(m, pert, epsilon, N, samples, bins, burn_in, seed,
                       threads=None):
    """Monte Carlo stationary measure of the adapted random system at
    noise level epsilon <= epsilon_0."""
    if epsilon > pert.epsilon + 1e-15:
        raise ConfigError("epsilon exceeds the perturbation cap epsilon_0")
    batch_counts, dropped = _ensemble_histogram(
        m, N, samples, bins, burn_in, seed, pert=pert, epsilon=epsilon,
        threads=threads)
    return EmpiricalMeasure.from_counts(m.domain, batch_counts.sum(axis=0),
                                        dropped=dropped)


def markov_step(mu, m, pert, epsilon, noise_draws, seed):
    """One averaged random step applied to a histogram (stationarity check)."""
    rng = substream(seed, TAG_NOISE, 777)
    centers = mu.bin_centers
    zetas = pert.zeta_many(centers) if pert is not None else np.zeros_like(centers)
    counts = np.zeros(mu.bins)
    dom = m.domain
    inv_w = mu.bins / dom.length
    base = dom.reduce(m.raw(centers))
    for _ in range(noise_draws):
        t = rng.uniform(-epsilon, epsilon)
        y = dom.reduce(base + t * zetas)
        idx = np.clip(((y - dom.lower) * inv_w).astype(np.int64), 0, mu.bins - 1)
        np.add.at(counts, idx, mu.weights)
    return EmpiricalMeasure(domain=dom, bins=mu.bins, weights=counts / counts.sum())


# ---------------------------------------------------------------------------
# Wasserstein-1 on fixed-bin histograms


def wasserstein1(mu, nu):
    """W1 between two histograms on the same grid.

    Interval domains: bin-width-weighted L1 distance between CDFs.
    Circle domains: the same after the optimal constant shift of the
    CDF difference (attained at its weighted median).
    """
    if mu.bins != nu.bins or mu.domain != nu.domain:
        raise BinMismatch("histograms live on different grids")
    diff = np.cumsum(mu.weights - nu.weights)
    if mu.domain.kind == "interval":
        return float(np.abs(diff).sum() * mu.bin_width)
    shift = np.median(diff)
    return float(np.abs(diff - shift).sum() * mu.bin_width)


def stability_curve(m, pert, epsilons, N, samples, bins, seed, burn_in=1000,
                    threads=None):
    """W1(mu_eps, mu_0) over a descending epsilon grid.

    mc_error is a batch-means estimate of the Monte Carlo floor of each
    full-run distance: mean of the 10 sub-run distances divided by
    sqrt(10) (W1 noise scales like 1/sqrt(samples)), maximized over the
    grid.
    """
    epsilons = np.asarray(epsilons, dtype=float)
    if np.any(epsilons > pert.epsilon + 1e-15):
        raise ConfigError("every epsilon must be <= the cap epsilon_0")
    ref_batches, _ = _ensemble_histogram(
        m, N, samples, bins, burn_in, seed, threads=threads)
    mu0 = EmpiricalMeasure.from_counts(m.domain, ref_batches.sum(axis=0))
    distances = []
    errors = []
    for k, eps in enumerate(epsilons):
        batches, _ = _ensemble_histogram(
            m, N, samples, bins, burn_in, (int(seed) ^ (0x5EED + k)),
            pert=pert, epsilon=float(eps), threads=threads)
        mu_eps = EmpiricalMeasure.from_counts(m.domain, batches.sum(axis=0))
        distances.append(wasserstein1(mu_eps, mu0))
        sub = [wasserstein1(EmpiricalMeasure.from_counts(m.domain, c), mu0)
               for c in batches if c.sum() > 0]
        errors.append(np.mean(sub) / np.sqrt(len(sub)))
    return StabilityCurve(epsilons=epsilons, distances=np.asarray(distances),
                          mc_error=float(max(errors)))
