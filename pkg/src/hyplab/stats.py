"""Large deviations, correlation decay, and power-law fits.

These estimators back the tail-exponent chain for intermittent maps:
correlation decay bounds large deviations, large deviations bound the
tail-set masses, and the fitted log-log slopes are the desk-scale
stand-ins for the exponents.
"""

import csv
from dataclasses import dataclass

import numpy as np

from ._streams import TAG_X0, run_chunked, substream
from .errors import ConfigError, DegenerateFit
from .maps import deriv_many_unchecked
from .measures import _ensemble_histogram  # noqa: F401  (shared engine idiom)
from . import maps

BURN_IN = 1000


@dataclass
class DecayFit:
    """Least-squares fit of log(values) against log(ns)."""

    ns: np.ndarray
    values: np.ndarray
    slope: float
    intercept: float
    r2: float

    def __post_init__(self):
        self.ns = np.asarray(self.ns, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if not -1e-12 <= self.r2 <= 1 + 1e-12:
            raise ConfigError("r2 must lie in [0, 1]")


def fit_decay(ns, values):
    """OLS fit on (log n, log value); values must be positive and not
    all identical (otherwise r^2 is undefined)."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if ns.size < 3:
        raise ConfigError("need at least 3 points")
    if np.any(values <= 0):
        raise ConfigError("values must be positive for a log-log fit")
    ly = np.log(values)
    if np.allclose(ly, ly[0], rtol=0, atol=1e-15):
        raise DegenerateFit("values carry no spread; r2 undefined")
    lx = np.log(ns)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot
    return DecayFit(ns=ns, values=values, slope=float(slope),
                    intercept=float(intercept), r2=min(max(r2, 0.0), 1.0))


def _evolve(m, xs, steps, seed_tag=0, seed=0):
    """Advance a batch of points `steps` iterations (no bookkeeping)."""
    x, step = maps.make_stepper(m, xs, bit_rng=substream(seed, TAG_X0, 50 + seed_tag))
    for _ in range(steps):
        x = step(x)
    return x


def _orbit_observable_mean(m, x0, steps, observable, seed=0):
    x, step = maps.make_stepper(m, [x0], bit_rng=substream(seed, TAG_X0, 99))
    acc = 0.0
    for _ in range(steps):
        acc += float(observable(x)[0])
        x = step(x)
    return acc / steps


def log_deriv_observable(m):
    """phi = log|Df|, the observable behind the Lyapunov exponent."""
    def phi(xs):
        return np.log(np.abs(deriv_many_unchecked(m, xs)))
    return phi


def ld_estimate(m, observable, eps_dev, n, samples, measure_mode, seed,
                threads=None):
    """Fraction of points whose n-step Birkhoff average of the
    observable deviates from a reference mean by more than eps_dev.

    The reference mean comes from a single 10x longer run (burned in),
    with documented O(1/sqrt(10 n)) bias.  measure_mode chooses uniform
    (lebesgue) or burned-in (physical) starting points.
    """
    if not (eps_dev > 0 and n >= 1):
        raise ConfigError("need eps_dev > 0 and n >= 1")
    if measure_mode not in ("lebesgue", "physical"):
        raise ConfigError("measure_mode must be lebesgue or physical")
    dom = m.domain
    rng = substream(seed, TAG_X0)
    ref_x0 = rng.uniform(dom.lower, dom.upper)
    ref_x0 = float(_evolve(m, [ref_x0], BURN_IN, seed_tag=1, seed=seed)[0])
    ref_mean = _orbit_observable_mean(m, ref_x0, 10 * n, observable, seed=seed)
    x0s = rng.uniform(dom.lower, dom.upper, size=samples)

    def work(ci, a, b):
        x = dom.reduce(x0s[a:b]).copy()
        if measure_mode == "physical":
            x = _evolve(m, x, BURN_IN, seed_tag=100 + ci, seed=seed)
        x, step = maps.make_stepper(m, x, bit_rng=substream(seed, TAG_X0, 200 + ci))
        acc = np.zeros(b - a)
        for _ in range(n):
            acc += observable(x)
            x = step(x)
        return (np.abs(acc / n - ref_mean) > eps_dev).sum()

    hits = sum(run_chunked(samples, work, threads=threads, chunk=4096))
    return float(hits / samples)


@dataclass
class CorrelationResult:
    value: float        # |cov(phi, psi o f^n)| under the physical estimate
    normalized: float   # value / (sup|phi| * sup|psi|) over the sample
    covariance: float
    stderr: float

    def __float__(self):
        return self.value


def correlation_estimate(m, phi, psi, n, samples, seed, threads=None):
    """Monte Carlo |<phi (psi o f^n)> - <phi><psi>| under the physical
    measure (burned-in uniform starts).  The normalized variant divides
    by empirical sup norms; the decay exponent is unaffected."""
    if n < 0:
        raise ConfigError("n must be >= 0")
    dom = m.domain
    rng = substream(seed, TAG_X0)
    x0s = rng.uniform(dom.lower, dom.upper, size=samples)

    def work(ci, a, b):
        x = dom.reduce(x0s[a:b]).copy()
        x = _evolve(m, x, BURN_IN, seed_tag=300 + ci, seed=seed)
        y = _evolve(m, x, n, seed_tag=400 + ci, seed=seed) if n else x
        return phi(x), psi(y)

    parts = run_chunked(samples, work, threads=threads, chunk=4096)
    phis = np.concatenate([p[0] for p in parts])
    psis = np.concatenate([p[1] for p in parts])
    cov = float(np.mean(phis * psis) - np.mean(phis) * np.mean(psis))
    k = min(10, samples)
    splits_p = np.array_split(phis, k)
    splits_q = np.array_split(psis, k)
    sub = [float(np.mean(p * q) - np.mean(p) * np.mean(q))
           for p, q in zip(splits_p, splits_q)]
    stderr = float(np.std(sub, ddof=1) / np.sqrt(k)) if k > 1 else 0.0
    sup = float(np.max(np.abs(phis))) * float(np.max(np.abs(psis)))
    value = abs(cov)
    return CorrelationResult(value=value,
                             normalized=value / sup if sup > 0 else 0.0,
                             covariance=cov, stderr=stderr)


def write_decay_csv(path, ns, values, stderrs=None, fit=None):
    """CSV rows (n, value, stderr) with the DecayFit appended as a footer."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "value", "stderr"])
        for i, nn in enumerate(ns):
            err = stderrs[i] if stderrs is not None else ""
            w.writerow([int(nn), repr(float(values[i])),
                        repr(float(err)) if err != "" else ""])
        if fit is not None:
            w.writerow(["fit", repr(fit.slope), repr(fit.r2)])
