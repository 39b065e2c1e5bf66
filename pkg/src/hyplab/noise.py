"""Adapted random perturbations f_t(x) = f(x) + t * zeta(x).

The amplitude zeta(x) = xi * omega^(-eta * H(x)^2) shrinks so fast in
the adapted hyperbolic time H that random orbits shadow the unperturbed
orbit long enough to keep every hyperbolic time up to H(x), which is
the mechanism behind stochastic stability here.  The noise law is
uniform on [-epsilon, epsilon].
"""

import json
import math
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from . import maps
from .errors import ConfigError, DomainExit, NoFeasibleEta
from .hyptimes import (HyperbolicParams, HypTimeReport, _first_hyp_batch,
                       _hyp_mask, adapted_hyperbolic_times_batch,
                       detect_hyperbolic_times)
from ._streams import TAG_NOISE, TAG_X0, substream

LOG_TINY = math.log(np.finfo(float).tiny)
ETA_GRID_STEP = 0.1
ETA_GRID_MAX = 1000.0


@dataclass
class NoiseSequence:
    values: np.ndarray
    epsilon: float
    seed: object = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.abs(self.values) > self.epsilon):
            raise ConfigError("noise values must satisfy |t_j| <= epsilon")


@dataclass
class RandomOrbitTrace:
    """Same layout as OrbitTrace plus the noise and the deviations
    |f^j_t(x) - f^j(x)| against the simultaneously computed unperturbed
    orbit.  log_inv_deriv uses Df of the unperturbed map at the random
    points (additive noise leaves the derivative unchanged)."""

    x0: float
    N: int
    points: np.ndarray
    log_inv_deriv: np.ndarray
    log_trunc_dist: np.ndarray
    delta: float
    noise: NoiseSequence
    deviations: np.ndarray
    hit_critical: bool = False


class ZetaTable:
    """Lazy cell cache for H over a fixed grid on the domain.

    H is locally constant almost everywhere, so treating it as constant
    on fine cells is faithful while avoiding a preimage-tree solve per
    orbit step.  Cell values are deterministic, hence safe to fill from
    any number of workers.
    """

    def __init__(self, m, params, depth, horizon, cells=4096):
        self.m = m
        self.params = params
        self.depth = depth
        self.horizon = horizon
        self.cells = int(cells)
        self._H = np.full(self.cells, -1, dtype=np.int64)
        self._lock = threading.Lock()

    def _centers(self, idx):
        dom = self.m.domain
        return dom.lower + (idx + 0.5) * dom.length / self.cells

    def h_values(self, xs):
        dom = self.m.domain
        idx = np.floor((np.asarray(xs, dtype=float) - dom.lower)
                       / dom.length * self.cells).astype(np.int64)
        idx = np.clip(idx, 0, self.cells - 1)
        missing = np.unique(idx[self._H[idx] < 0])
        if missing.size:
            vals = adapted_hyperbolic_times_batch(
                self.m, self._centers(missing), self.params, self.depth, self.horizon)
            with self._lock:
                self._H[missing] = vals
        return self._H[idx]


@dataclass
class AdaptedPerturbation:
    """Constants of the adapted perturbation plus its H evaluator."""

    xi: float
    eta: float
    omega: float
    delta1: float
    epsilon: float  # the cap epsilon_0 on admissible noise levels
    C_dist: float
    map: object
    params: HyperbolicParams
    depth: int = 6
    horizon: int = 256
    table: ZetaTable = field(default=None, repr=False)

    def __post_init__(self):
        if not self.eta > 1.5:
            raise ConfigError("eta must exceed 3/2")
        s = self.params.sigma
        if not max(self.C_dist * s ** (2 * self.eta - 0.5), s ** (2 * self.eta)) < 0.5:
            raise ConfigError("eta fails the contraction inequality")
        if not math.isclose(self.xi, min(self.delta1 / 2.0, 0.5), rel_tol=1e-12):
            raise ConfigError("xi must equal min(delta1/2, 1/2)")
        if not self.delta1 <= 0.5:
            raise ConfigError("delta1 must be <= 1/2")
        if self.omega < s ** -0.5 * (1 - 1e-12):
            raise ConfigError("omega must be at least sigma^(-1/2)")
        if not 0 < self.epsilon <= 0.5:
            raise ConfigError("epsilon must lie in (0, 1/2]")

    def constants_dict(self):
        return {"xi": self.xi, "eta": self.eta, "omega": self.omega,
                "delta1": self.delta1}

    def H(self, x):
        """Adapted hyperbolic time of x (direct preimage-tree solve)."""
        return int(adapted_hyperbolic_times_batch(
            self.map, [x], self.params, self.depth, self.horizon)[0])

    def ensure_table(self, cells=4096):
        if self.table is None or self.table.cells != cells:
            self.table = ZetaTable(self.map, self.params, self.depth,
                                   self.horizon, cells=cells)
        return self.table

    def _zeta_from_H(self, H):
        logz = math.log(self.xi) - self.eta * np.asarray(H, dtype=float) ** 2 \
            * math.log(self.omega)
        return np.exp(np.maximum(logz, LOG_TINY))  # clamped: zeta stays > 0

    def zeta(self, x):
        """zeta(x) = xi * omega^(-eta H(x)^2) > 0, exact H."""
        return float(self._zeta_from_H(self.H(x)))

    def zeta_many(self, xs, exact=False):
        xs = np.asarray(xs, dtype=float)
        if exact:
            H = adapted_hyperbolic_times_batch(self.map, xs, self.params,
                                               self.depth, self.horizon)
        else:
            H = self.ensure_table().h_values(xs)
        return self._zeta_from_H(H)


def choose_constants(m, params, gamma, depth=6, horizon=256):
    """Derive (xi, eta, omega, delta1, epsilon_0) from the map constants.

    omega = max(exp(log B + beta (gamma - log delta)), sigma^(-1/2)) bounds
    |Df^n| <= omega^n at hyperbolic times; eta is the smallest grid value
    1.5 + 0.1 k making both contraction products drop below 1/2.
    """
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    sigma, delta = params.sigma, params.delta
    delta1 = delta / 2.0
    omega = max(math.exp(math.log(params.B) + params.beta * (gamma - math.log(delta))),
                sigma ** -0.5)
    C = params.B * sigma ** -0.5
    eta = None
    k = 1
    while 1.5 + ETA_GRID_STEP * k <= ETA_GRID_MAX:
        cand = 1.5 + ETA_GRID_STEP * k
        if max(C * sigma ** (2 * cand - 0.5), sigma ** (2 * cand)) < 0.5:
            eta = cand
            break
        k += 1
    if eta is None:
        raise NoFeasibleEta("no eta below 1000 works; sigma too close to 1")
    xi = min(delta1 / 2.0, 0.5)
    eps0 = min(0.5, delta1 / 2.0)
    return AdaptedPerturbation(xi=xi, eta=eta, omega=omega, delta1=delta1,
                               epsilon=eps0, C_dist=C, map=m, params=params,
                               depth=depth, horizon=horizon)


def sample_noise(epsilon, length, seed):
    """i.i.d. uniform noise on [-epsilon, epsilon], reproducible from seed."""
    if not 0 < epsilon <= 0.5:
        raise ConfigError("epsilon must lie in (0, 1/2]")
    path = seed if isinstance(seed, (tuple, list)) else (seed,)
    rng = substream(path[0], TAG_NOISE, *path[1:])
    values = rng.uniform(-epsilon, epsilon, size=int(length))
    return NoiseSequence(values=values, epsilon=float(epsilon), seed=tuple(path))


def _random_orbit_batch(m, pert, x0, noise_matrix, N, zeta_exact=True):
    """Advance T perturbed copies of x0 alongside the unperturbed orbit.

    noise_matrix is (T, >=N).  Returns (points (T, N+1), lid, ltd,
    valid, deviations (T, N+1)).  Dyadic maps share one injected bit
    per step between all copies and the reference orbit, so zero noise
    reproduces the unperturbed orbit bit-for-bit.
    """
    noise_matrix = np.atleast_2d(np.asarray(noise_matrix, dtype=float))
    T = noise_matrix.shape[0]
    if noise_matrix.shape[1] < N:
        raise ConfigError("noise shorter than requested orbit length")
    dom = m.domain
    x_u = float(dom.reduce(x0))
    xp = np.full(T, x_u)
    points = np.empty((T, N + 1))
    deviations = np.zeros((T, N + 1))
    lid = np.zeros((T, N))
    ltd = np.zeros((T, N))
    valid = np.full(T, N, dtype=int)
    alive = np.ones(T, dtype=bool)
    points[:, 0] = xp
    if m.dyadic_bits:
        u_state = int(maps.mantissa_state(np.float64(x_u)))
        key = u_state & ((1 << 53) - 1)
        bitgen = np.random.default_rng(np.random.SeedSequence([0xD0B, key]))
        x_u = dom.lower + (u_state / float(1 << 53)) * dom.length
        xp = np.full(T, x_u)
        points[:, 0] = xp
    tol = m.tol_crit
    for j in range(N):
        d = m.dist_to_critical(xp)
        hit = alive & (d < tol)
        if hit.any():
            valid[hit] = j
            alive &= ~hit
        dtr = np.where(d < pert.params.delta, d, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ltd[:, j] = np.log(np.where(alive, dtr, 1.0))
            df = np.abs(maps.deriv_many_unchecked(m, xp))
            lid[:, j] = np.where(alive, -np.log(np.where(alive, df, 1.0)), 0.0)
        drift = noise_matrix[:, j] * pert.zeta_many(xp, exact=zeta_exact)
        base = dom.reduce(m.raw(xp))
        if m.dyadic_bits:
            bit = int(bitgen.integers(0, 2))
            add = bit * dom.length / float(1 << 53)
            xp = dom.reduce(base + add + drift)
            u_state = ((u_state << 1) & ((1 << 53) - 1)) | bit
            x_u = dom.lower + (u_state / float(1 << 53)) * dom.length
        else:
            v = m.raw(np.float64(x_u))
            if dom.kind == "interval":
                out = (base + drift < dom.lower) | (base + drift > dom.upper)
                if np.any(out & alive):
                    raise DomainExit(
                        f"{m.name}: perturbed point left [{dom.lower}, {dom.upper}]")
            xp = dom.reduce(base + drift)
            x_u = float(dom.reduce(v))
        points[:, j + 1] = xp
        deviations[:, j + 1] = dom.distance(xp, x_u)
    return points, lid, ltd, valid, deviations


def random_orbit(m, pert, x0, noise, N, zeta_exact=True):
    """Random orbit driven by one noise sequence; records deviations
    against the unperturbed orbit of the same start."""
    if N > noise.values.size:
        raise ConfigError("N exceeds the noise sequence length")
    if np.any(np.abs(noise.values) > pert.epsilon + 1e-15):
        raise ConfigError("noise exceeds the perturbation's epsilon cap")
    points, lid, ltd, valid, dev = _random_orbit_batch(
        m, pert, x0, noise.values[None, :N], N, zeta_exact=zeta_exact)
    n = int(valid[0])
    return RandomOrbitTrace(
        x0=float(x0), N=n, points=points[0, :n + 1],
        log_inv_deriv=lid[0, :n], log_trunc_dist=ltd[0, :n],
        delta=pert.params.delta,
        noise=noise, deviations=dev[0, :n + 1], hit_critical=n < N)


def detect_random_hyperbolic_times(rtrace, params, sigma_hat):
    """Hyperbolic-time scan along a random orbit at the relaxed constant."""
    if not params.sigma < sigma_hat < 1:
        raise ConfigError("sigma_hat must lie in (sigma, 1)")
    relaxed = replace(params, sigma=sigma_hat)
    return detect_hyperbolic_times(rtrace, relaxed)


@dataclass
class PreservationReport:
    samples: int
    trials: int
    pass_a: float
    pass_b: float
    worst_shadow_margin: float
    epsilon: float
    constants: dict
    sigma_hat: float = None
    h_values: np.ndarray = field(default=None, repr=False)
    H_values: np.ndarray = field(default=None, repr=False)

    def to_json(self):
        return json.dumps({
            "samples": self.samples, "trials": self.trials,
            "pass_a": self.pass_a, "pass_b": self.pass_b,
            "worst_shadow_margin": self.worst_shadow_margin,
            "epsilon": self.epsilon, "constants": self.constants,
        }, sort_keys=True, indent=2)


def preservation_experiment(m, params, pert, samples, noise_trials, seed,
                            epsilon=None, sigma_hat=None, h_cap=50,
                            pool_factor=16):
    """Check that adapted noise preserves hyperbolic times.

    For sampled points with uncensored h(x) <= h_cap and each noise
    sequence: (a) H(x) is a (sigma_hat, delta)-hyperbolic time of the
    random orbit, (b) the first random hyperbolic time equals h(x),
    (c) deviations stay below the shadowing bound
    epsilon_0 * delta1 * omega^(-eta (H(x)-j)).
    """
    if sigma_hat is None:
        sigma_hat = math.sqrt(params.sigma)
    if epsilon is None:
        epsilon = pert.epsilon / 2.0
    if epsilon > pert.epsilon:
        raise ConfigError("epsilon exceeds the perturbation cap epsilon_0")
    rng = substream(seed, TAG_X0)
    pool = rng.uniform(m.domain.lower, m.domain.upper, size=samples * pool_factor)
    h_pool = _first_hyp_batch(m, pool, params, pert.horizon)
    good = (h_pool >= 1) & (h_pool <= h_cap)
    xs = pool[good][:samples]
    hs = h_pool[good][:samples]
    Hs = adapted_hyperbolic_times_batch(m, xs, params, pert.depth, pert.horizon)
    n_pts = xs.size
    ok_a = 0
    ok_b = 0
    total = 0
    worst = -math.inf
    for i in range(n_pts):
        H = int(Hs[i])
        h = int(hs[i])
        noise_rng = substream(seed, TAG_NOISE, i)
        tmat = noise_rng.uniform(-epsilon, epsilon, size=(noise_trials, H))
        if noise_trials == 0:
            continue
        _, lid, ltd, valid, dev = _random_orbit_batch(
            m, pert, xs[i], tmat, H, zeta_exact=True)
        relaxed = replace(params, sigma=sigma_hat)
        mask = _hyp_mask(lid, ltd, valid, relaxed)
        firsts = np.where(mask.any(axis=1), mask.argmax(axis=1) + 1, -1)
        ok_a += int((mask[:, H - 1]).sum())
        ok_b += int((firsts == h).sum())
        js = np.arange(H + 1)
        bound = pert.epsilon * pert.delta1 * pert.omega ** (-pert.eta * (H - js))
        margins = dev - bound[None, :]
        worst = max(worst, float(margins.max()))
        total += noise_trials
    pass_a = ok_a / total if total else 1.0
    pass_b = ok_b / total if total else 1.0
    worst = worst if total else 0.0
    return PreservationReport(
        samples=int(n_pts), trials=int(noise_trials),
        pass_a=pass_a, pass_b=pass_b, worst_shadow_margin=worst,
        epsilon=float(epsilon), constants=pert.constants_dict(),
        sigma_hat=float(sigma_hat), h_values=hs, H_values=Hs)
