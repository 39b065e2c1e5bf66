"""Hyperbolic-time detection, first/adapted hyperbolic time maps, tails.

A time n is a (sigma, delta)-hyperbolic time for x when every backward
window [n-k, n-1] shows cumulative contraction of inverse derivatives
below sigma^k and the truncated distance to the critical set at step
n-k stays above sigma^(b k).  Two detectors are exposed: a brute-force
scan over all (n, k) pairs, kept as the oracle, and a single-pass
running-minimum scan; they must agree exactly.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import maps
from ._streams import TAG_X0, chunk_ranges, run_chunked, substream
from .errors import ConfigError, PreimageExplosion

DEFAULT_NODE_BUDGET = 10 ** 6


@dataclass(frozen=True)
class HyperbolicParams:
    """(sigma, delta) plus the non-degeneracy constants feeding b and omega."""

    sigma: float
    delta: float
    beta: float = 1.0
    B: float = 2.0

    def __post_init__(self):
        if not 0 < self.sigma < 1:
            raise ConfigError("sigma must lie in (0, 1)")
        if not 0 < self.delta <= 1:
            raise ConfigError("delta must lie in (0, 1]")
        if not self.beta > 0:
            raise ConfigError("beta must be positive")
        if not self.B > 1:
            raise ConfigError("B must exceed 1")

    @property
    def b(self):
        return min(0.5, 0.5 / self.beta)


@dataclass
class OrbitTrace:
    """Orbit points with the two Birkhoff summands along them.

    log_inv_deriv[j] = -log|Df(f^j x)|, log_trunc_dist[j] = log d_delta(f^j x).
    N is the number of recorded steps; a trace that ran into the
    critical set is truncated there and flagged.
    """

    x0: float
    N: int
    points: np.ndarray
    log_inv_deriv: np.ndarray
    log_trunc_dist: np.ndarray
    delta: float
    hit_critical: bool = False

    def __post_init__(self):
        if len(self.points) != self.N + 1:
            raise ConfigError("trace needs N+1 points")
        if len(self.log_inv_deriv) != self.N or len(self.log_trunc_dist) != self.N:
            raise ConfigError("trace needs N log entries")


@dataclass
class HypTimeReport:
    times: np.ndarray
    first: int = None
    density: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=int)
        if self.times.size and self.first != int(self.times.min()):
            raise ConfigError("first must be min(times)")


@dataclass
class TailTable:
    """Monte Carlo masses of the tail sets Gamma_n and of {h > n}."""

    ns: np.ndarray
    gamma_mass: np.ndarray
    h_tail_mass: np.ndarray
    sample_count: int
    gamma_params: tuple  # (c, gamma, delta)
    censored_h: int = 0
    h_samples: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.ns = np.asarray(self.ns, dtype=int)
        self.gamma_mass = np.asarray(self.gamma_mass, dtype=float)
        self.h_tail_mass = np.asarray(self.h_tail_mass, dtype=float)
        for arr in (self.gamma_mass, self.h_tail_mass):
            if np.any(arr < -1e-15) or np.any(arr > 1 + 1e-15):
                raise ConfigError("masses must lie in [0, 1]")
            if np.any(np.diff(arr) > 1e-15):
                raise ConfigError("masses must be non-increasing in n")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "gamma_mass", "h_tail_mass", "samples", "censored"])
            for i, n in enumerate(self.ns):
                w.writerow([int(n), repr(float(self.gamma_mass[i])),
                            repr(float(self.h_tail_mass[i])),
                            self.sample_count, self.censored_h])


# ---------------------------------------------------------------------------
# tracing


def _trace_batch(m, x0s, N, delta, bit_rng=None):
    """Vectorized orbit tracing.

    Returns (points, lid, ltd, valid): points is (S, N+1); lid/ltd are
    (S, N); valid[s] < N means the orbit met the critical set at that
    step and the trailing entries are unusable.
    """
    x0s = np.atleast_1d(np.asarray(x0s, dtype=float))
    S = x0s.shape[0]
    x, step = maps.make_stepper(m, x0s, bit_rng=bit_rng)
    points = np.empty((S, N + 1))
    lid = np.zeros((S, N))
    ltd = np.zeros((S, N))
    valid = np.full(S, N, dtype=int)
    points[:, 0] = x
    alive = np.ones(S, dtype=bool)
    tol = m.tol_crit
    for j in range(N):
        d = m.dist_to_critical(x)
        hit = alive & (d < tol)
        if hit.any():
            valid[hit] = j
            alive &= ~hit
        dtr = np.where(d < delta, d, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ltd[:, j] = np.log(np.where(alive, dtr, 1.0))
            df = np.abs(maps.deriv_many_unchecked(m, x))
            lid[:, j] = np.where(alive, -np.log(np.where(alive, df, 1.0)), 0.0)
        x = step(x)
        points[:, j + 1] = x
    return points, lid, ltd, valid


def trace_orbit(m, x0, N, delta):
    """Trace one orbit; truncates (and flags) if it meets the critical set."""
    if N < 1:
        raise ConfigError("N must be >= 1")
    points, lid, ltd, valid = _trace_batch(m, [x0], N, delta)
    n = int(valid[0])
    return OrbitTrace(
        x0=float(x0), N=n, points=points[0, :n + 1],
        log_inv_deriv=lid[0, :n], log_trunc_dist=ltd[0, :n],
        delta=float(delta), hit_critical=n < N)


# ---------------------------------------------------------------------------
# detection


def _hyp_mask(lid, ltd, valid, params):
    """Boolean matrix ok[s, n-1]: n is a hyperbolic time for orbit s."""
    S, N = lid.shape
    L = np.log(params.sigma)
    bL = params.b * L
    A = np.concatenate([np.zeros((S, 1)), np.cumsum(lid, axis=1)], axis=1)
    At = A - L * np.arange(N + 1)
    runmin = np.minimum.accumulate(At, axis=1)
    cond1 = At[:, 1:] <= runmin[:, :-1]
    shifted = ltd + bL * np.arange(N)
    cond2 = np.minimum.accumulate(shifted, axis=1) >= bL * np.arange(1, N + 1)
    ok = cond1 & cond2
    ok &= np.arange(1, N + 1) <= valid[:, None]
    return ok


def detect_hyperbolic_times(trace, params):
    """Single-pass running-minimum detector (the fast path)."""
    if trace.N == 0:
        return HypTimeReport(times=np.empty(0, dtype=int), first=None, density=0.0)
    ok = _hyp_mask(trace.log_inv_deriv[None, :], trace.log_trunc_dist[None, :],
                   np.array([trace.N]), params)[0]
    times = np.nonzero(ok)[0] + 1
    first = int(times[0]) if times.size else None
    return HypTimeReport(times=times, first=first, density=times.size / trace.N)


def detect_hyperbolic_times_naive(trace, params):
    """Brute-force oracle: checks every (n, k) window pair directly."""
    N = trace.N
    if N == 0:
        return HypTimeReport(times=np.empty(0, dtype=int), first=None, density=0.0)
    lid, ltd = trace.log_inv_deriv, trace.log_trunc_dist
    L = np.log(params.sigma)
    bL = params.b * L
    times = []
    for n in range(1, N + 1):
        ks = np.arange(1, n + 1)
        sums = np.array([lid[n - k:n].sum() for k in ks])
        if np.all(sums <= ks * L) and np.all(ltd[n - ks] >= bL * ks):
            times.append(n)
    times = np.asarray(times, dtype=int)
    first = int(times[0]) if times.size else None
    return HypTimeReport(times=times, first=first, density=times.size / N)


def _first_hyp_batch(m, xs, params, N_max, bit_rng=None):
    """First hyperbolic time per point; -1 where censored (none within
    N_max, or the orbit hit the critical set first)."""
    _, lid, ltd, valid = _trace_batch(m, xs, N_max, params.delta, bit_rng=bit_rng)
    ok = _hyp_mask(lid, ltd, valid, params)
    has = ok.any(axis=1)
    first = np.where(has, ok.argmax(axis=1) + 1, -1)
    return first.astype(int)


def first_hyperbolic_time(m, x, params, N_max):
    """h(x) within horizon N_max, or None when censored."""
    if N_max < 1:
        raise ConfigError("N_max must be >= 1")
    first = _first_hyp_batch(m, [x], params, N_max)[0]
    return int(first) if first > 0 else None


# ---------------------------------------------------------------------------
# adapted hyperbolic time over truncated preimage trees


def adapted_hyperbolic_times_batch(m, xs, params, depth, N_max,
                                   node_budget=DEFAULT_NODE_BUDGET, tol=None):
    """H_L for a batch of points: max of h(z) - l over all ancestors z
    with f^l(z) = x, 0 <= l <= depth.  Censored h values are skipped;
    if nothing usable remains, or the max is non-positive, the value is
    1 (the convention for an undefined supremum)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    roots = np.arange(xs.shape[0])
    nodes = [xs]
    node_roots = [roots]
    node_depth = [np.zeros(xs.shape[0], dtype=int)]
    level_pts, level_roots = xs, roots
    total = xs.shape[0]
    for l in range(1, depth + 1):
        parents, pre = maps.preimages_many(m, level_pts, tol=tol)
        if pre.size == 0:
            break
        level_roots = level_roots[parents]
        level_pts = pre
        total += pre.size
        if total > node_budget:
            raise PreimageExplosion(f"preimage tree exceeded {node_budget} nodes")
        nodes.append(level_pts)
        node_roots.append(level_roots)
        node_depth.append(np.full(level_pts.shape[0], l, dtype=int))
    all_pts = np.concatenate(nodes)
    all_roots = np.concatenate(node_roots)
    all_depth = np.concatenate(node_depth)
    h = np.empty(all_pts.shape[0], dtype=int)
    for a, b in chunk_ranges(all_pts.shape[0], 4096):
        h[a:b] = _first_hyp_batch(m, all_pts[a:b], params, N_max)
    score = np.where(h > 0, h - all_depth, np.iinfo(np.int64).min)
    best = np.full(xs.shape[0], np.iinfo(np.int64).min)
    np.maximum.at(best, all_roots, score)
    return np.where(best >= 1, best, 1).astype(int)


def adapted_hyperbolic_time(m, x, params, depth, N_max,
                            node_budget=DEFAULT_NODE_BUDGET):
    """H_L(x); see adapted_hyperbolic_times_batch."""
    if depth < 0:
        raise ConfigError("depth must be >= 0")
    return int(adapted_hyperbolic_times_batch(m, [x], params, depth, N_max,
                                              node_budget=node_budget)[0])


# ---------------------------------------------------------------------------
# tail sets


def tail_table(m, params, c, gamma, ns, samples, seed, horizon=None, threads=None):
    """Monte Carlo tail masses.

    For each of `samples` uniform points, D-hat is the last time the
    Birkhoff average of -log d_delta exceeds gamma (plus one), E-hat the
    last time the average of log|Df^-1| sits above -c/3 (plus one), and
    h the first hyperbolic time; gamma_mass[i] is the fraction with
    min(D-hat, E-hat) > ns[i].  All finite-horizon proxies; the horizon
    defaults to 4 * max(ns).
    """
    ns = np.asarray(ns, dtype=int)
    if not (c > 0 and gamma > 0):
        raise ConfigError("need c > 0 and gamma > 0")
    if ns.size == 0 or np.any(np.diff(ns) <= 0):
        raise ConfigError("ns must be ascending and non-empty")
    H = int(horizon) if horizon is not None else 4 * int(ns.max())
    if H < 4 * ns.max():
        raise ConfigError("horizon must be at least 4 * max(ns)")
    x0_rng = substream(seed, TAG_X0)
    x0s = x0_rng.uniform(m.domain.lower, m.domain.upper, size=samples)

    def work(ci, a, b):
        _, lid, ltd, valid = _trace_batch(
            m, x0s[a:b], H, params.delta, bit_rng=substream(seed, TAG_X0, 100 + ci))
        S = b - a
        steps = np.arange(1, H + 1)
        avg_rec = np.cumsum(-ltd, axis=1) / steps
        avg_exp = np.cumsum(lid, axis=1) / steps
        live = steps[None, :] <= valid[:, None]
        viol_d = (avg_rec > gamma) & live
        viol_e = (avg_exp > -c / 3.0) & live
        d_hat = np.where(viol_d.any(axis=1), H - np.argmax(viol_d[:, ::-1], axis=1), 0) + 1
        e_hat = np.where(viol_e.any(axis=1), H - np.argmax(viol_e[:, ::-1], axis=1), 0) + 1
        ok = _hyp_mask(lid, ltd, valid, params)
        h = np.where(ok.any(axis=1), ok.argmax(axis=1) + 1, -1)
        return d_hat, e_hat, h

    parts = run_chunked(samples, work, threads=threads)
    d_hat = np.concatenate([p[0] for p in parts])
    e_hat = np.concatenate([p[1] for p in parts])
    h = np.concatenate([p[2] for p in parts])
    tail = np.minimum(d_hat, e_hat)
    censored = int((h < 0).sum())
    h_eff = np.where(h > 0, h, H + 1)  # censored h exceeds every n <= horizon
    gamma_mass = np.array([(tail > n).mean() for n in ns])
    h_tail = np.array([(h_eff > n).mean() for n in ns])
    return TailTable(ns=ns, gamma_mass=gamma_mass, h_tail_mass=h_tail,
                     sample_count=int(samples), gamma_params=(c, gamma, params.delta),
                     censored_h=censored, h_samples=h)


def lp_tail_check(h_samples, p):
    """Partial sums of n^p * mass(h = n) on a dyadic grid of cutoffs.

    h_samples may contain None / non-positive entries (censored); they
    contribute no mass.  converged means the last two partial sums grew
    by less than 1% relative.
    """
    if not p > 0:
        raise ConfigError("p must be positive")
    hs = np.asarray([(-1 if v is None else int(v)) for v in h_samples], dtype=int)
    total = hs.size
    if total == 0:
        raise ConfigError("need at least one sample")
    good = hs[hs > 0]
    if good.size == 0:
        return [0.0], False
    n_max = int(good.max())
    counts = np.bincount(good, minlength=n_max + 1).astype(float) / total
    weights = np.arange(n_max + 1, dtype=float) ** p * counts
    cum = np.cumsum(weights)
    grid = []
    mm = 1
    while mm < n_max:
        grid.append(mm)
        mm *= 2
    grid.append(n_max)
    sums = [float(cum[min(g, n_max)]) for g in grid]
    if len(sums) == 1:
        return sums, True
    prev, last = sums[-2], sums[-1]
    converged = last <= prev * 1.01 if prev > 0 else last == 0
    return sums, bool(converged)
