"""One-dimensional map models: domains, built-in families, preimages.

A MapModel bundles the map, its closed-form derivative, the critical
set and a monotone branch partition.  Everything downstream (orbit
tracing, hyperbolic-time detection, noise, measure estimation) consumes
this one object.  Built-in families:

    doubling               2x mod 1 on the circle [0, 1)
    intermittent(alpha)    neutral fixed point at 0, circle [0, 1)
    quadratic(a)           1 - a x^2 on the interval [-1, 1]
    prv(a, alpha, beta)    infinite-modal circle map on [-1, 1] with
                           critical points accumulating at 0

User maps can be built directly from MapModel with their own derivative
callback; no symbolic differentiation is attempted.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import BranchResolutionFailure, ConfigError, CriticalPointError

TOL_CRIT_REL = 1e-12
PREIMAGE_TOL_REL = 1e-10
MANTISSA = 53
_MANT_MASK = (1 << MANTISSA) - 1
_MANT_SCALE = float(1 << MANTISSA)


@dataclass(frozen=True)
class Domain:
    """Circle or interval; circles identify the endpoints."""

    kind: str
    lower: float
    upper: float

    def __post_init__(self):
        if self.kind not in ("circle", "interval"):
            raise ConfigError(f"unknown domain kind {self.kind!r}")
        if not self.lower < self.upper:
            raise ConfigError("domain needs lower < upper")

    @property
    def length(self):
        return self.upper - self.lower

    def reduce(self, x):
        """Map values into the domain (wraparound for circles)."""
        if self.kind == "circle":
            return self.lower + np.mod(np.asarray(x, dtype=float) - self.lower, self.length)
        return np.asarray(x, dtype=float)

    def distance(self, x, y):
        """|x - y|, with wraparound on circles."""
        d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        if self.kind == "circle":
            return np.minimum(d, self.length - d)
        return d

    def contains(self, x):
        return bool(np.all((np.asarray(x) >= self.lower) & (np.asarray(x) <= self.upper)))


@dataclass
class MapModel:
    """A piecewise-monotone 1D map with closed-form derivative.

    raw(x) returns unreduced (lifted) values so branch images are plain
    intervals; eval_many reduces them into the domain.  branch_endpoints
    partition the domain into maximal monotone pieces.  nondegeneracy
    stores the power-law constants (B, beta) near the critical set when
    they are documented for the family.
    """

    name: str
    domain: Domain
    params: dict
    raw: object
    deriv_raw: object
    critical_points: np.ndarray
    branch_endpoints: np.ndarray
    nondegeneracy: tuple = None
    dyadic_bits: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.critical_points = np.asarray(self.critical_points, dtype=float)
        self.branch_endpoints = np.asarray(self.branch_endpoints, dtype=float)
        if self.branch_endpoints.size < 2:
            raise ConfigError("need at least one branch")
        if np.any(np.diff(self.branch_endpoints) <= 0):
            raise ConfigError("branch endpoints must be strictly increasing")
        if self.nondegeneracy is not None:
            B, beta = self.nondegeneracy
            if not (B > 1 and beta > 0):
                raise ConfigError("nondegeneracy needs B > 1, beta > 0")

    @property
    def tol_crit(self):
        return TOL_CRIT_REL * self.domain.length

    @property
    def branches(self):
        e = self.branch_endpoints
        return [(e[i], e[i + 1]) for i in range(len(e) - 1)]

    def dist_to_critical(self, x):
        """Distance to the critical set; +inf when the set is empty."""
        x = np.asarray(x, dtype=float)
        if self.critical_points.size == 0:
            return np.full(x.shape, np.inf) if x.ndim else np.inf
        d = self.domain.distance(x[..., None], self.critical_points[None, :]) \
            if x.ndim else self.domain.distance(x, self.critical_points)
        return d.min(axis=-1)


# ---------------------------------------------------------------------------
# operations


def eval_point(m, x):
    """f(x) reduced into the domain."""
    return float(m.domain.reduce(m.raw(np.asarray(x, dtype=float))))


def eval_many(m, xs):
    return m.domain.reduce(m.raw(np.asarray(xs, dtype=float)))


def deriv(m, x):
    """Closed-form Df(x); raises CriticalPointError within tol_crit of C."""
    d = m.dist_to_critical(x)
    if d < m.tol_crit:
        raise CriticalPointError(f"{m.name}: derivative at distance {d:.3e} from critical set")
    return float(m.deriv_raw(np.asarray(x, dtype=float)))


def deriv_many_unchecked(m, xs):
    """Vectorized Df without the critical guard (callers mask separately)."""
    return m.deriv_raw(np.asarray(xs, dtype=float))


def truncated_dist(m, x, delta):
    """delta-truncated distance to the critical set: d if d < delta else 1."""
    if not 0 < delta <= 1:
        raise ConfigError("delta must lie in (0, 1]")
    d = m.dist_to_critical(x)
    return np.where(d < delta, d, 1.0) if np.ndim(d) else (float(d) if d < delta else 1.0)


def _branch_targets(m, lo_val, hi_val, y):
    """Lifted targets y + k*period that fall inside [lo_val, hi_val]."""
    if m.domain.kind != "circle":
        return [y] if lo_val <= y <= hi_val else []
    period = m.domain.length
    k0 = math.ceil((lo_val - y) / period - 1e-12)
    k1 = math.floor((hi_val - y) / period + 1e-12)
    return [y + k * period for k in range(k0, k1 + 1) if lo_val <= y + k * period <= hi_val]


def _solve_branch(m, u, v, target, tol):
    """Bracketed bisection on [u, v] refined by Newton with the closed-form
    derivative; returns z with |raw(z) - target| <= tol."""
    fu = float(m.raw(np.float64(u))) - target
    fv = float(m.raw(np.float64(v))) - target
    if fu == 0.0:
        return u
    if fv == 0.0:
        return v
    if fu * fv > 0:
        raise BranchResolutionFailure(
            f"{m.name}: no bracket on branch [{u}, {v}] for target {target}")
    a, b, fa = u, v, fu
    for _ in range(64):
        mid = 0.5 * (a + b)
        if mid == a or mid == b:
            break
        fm = float(m.raw(np.float64(mid))) - target
        if fm == 0.0:
            return mid
        if fa * fm < 0:
            b = mid
        else:
            a, fa = mid, fm
    z = 0.5 * (a + b)
    for _ in range(4):
        df = float(m.deriv_raw(np.float64(z)))
        if df == 0.0 or not math.isfinite(df):
            break
        step = (float(m.raw(np.float64(z))) - target) / df
        zn = min(max(z - step, a), b)
        if zn == z:
            break
        z = zn
    if abs(float(m.raw(np.float64(z))) - target) > tol:
        raise BranchResolutionFailure(
            f"{m.name}: residual above tol on branch [{u}, {v}] for target {target}")
    return z


def preimages(m, y, tol=None):
    """All solutions of f(z) = y, one per monotone branch whose image
    contains y; sorted, deduplicated across shared branch endpoints."""
    if tol is None:
        tol = PREIMAGE_TOL_REL * m.domain.length
    if tol <= 0:
        raise ConfigError("tol must be positive")
    y = float(m.domain.reduce(y))
    roots = []
    for u, v in m.branches:
        gu = float(m.raw(np.float64(u)))
        gv = float(m.raw(np.float64(v)))
        lo_val, hi_val = min(gu, gv), max(gu, gv)
        for target in _branch_targets(m, lo_val - tol, hi_val + tol, y):
            t = min(max(target, lo_val), hi_val)
            roots.append(_solve_branch(m, u, v, t, tol))
    roots = np.sort(m.domain.reduce(np.asarray(roots, dtype=float)))
    keep = []
    merge_eps = 1e-9 * m.domain.length
    for r in roots:
        if keep and m.domain.distance(keep[-1], r) <= merge_eps:
            continue
        keep.append(float(r))
    if len(keep) > 1 and m.domain.kind == "circle" \
            and m.domain.distance(keep[0], keep[-1]) <= merge_eps:
        keep.pop()
    return keep


def preimages_many(m, ys, tol=None):
    """Vectorized preimages for a batch of targets.

    Returns (parents, roots): parents[i] is the index into ys whose
    preimage roots[i] is.  Bisection runs branch-by-branch over the
    whole batch at once.
    """
    if tol is None:
        tol = PREIMAGE_TOL_REL * m.domain.length
    ys = np.asarray(m.domain.reduce(np.asarray(ys, dtype=float)), dtype=float).ravel()
    parents, roots = [], []
    period = m.domain.length
    for u, v in m.branches:
        gu = float(m.raw(np.float64(u)))
        gv = float(m.raw(np.float64(v)))
        lo_val, hi_val = min(gu, gv), max(gu, gv)
        if m.domain.kind == "circle":
            k0 = math.ceil((lo_val - tol - ys.max()) / period - 1e-12)
            k1 = math.floor((hi_val + tol - ys.min()) / period + 1e-12)
            shifts = range(k0, k1 + 1)
        else:
            shifts = [0]
        for k in shifts:
            t = ys + k * period
            mask = (t >= lo_val - tol) & (t <= hi_val + tol)
            if not mask.any():
                continue
            idx = np.nonzero(mask)[0]
            tt = np.clip(t[idx], lo_val, hi_val)
            z = _bisect_newton_batch(m, u, v, tt, tol)
            parents.append(idx)
            roots.append(z)
    if not parents:
        return np.empty(0, dtype=int), np.empty(0)
    parents = np.concatenate(parents)
    roots = m.domain.reduce(np.concatenate(roots))
    # dedupe roots that coincide across adjacent branches
    order = np.lexsort((roots, parents))
    parents, roots = parents[order], roots[order]
    keep = np.ones(len(roots), dtype=bool)
    merge_eps = 1e-9 * period
    same_parent = parents[1:] == parents[:-1]
    close = m.domain.distance(roots[1:], roots[:-1]) <= merge_eps
    keep[1:] &= ~(same_parent & close)
    return parents[keep], roots[keep]


def _bisect_newton_batch(m, u, v, targets, tol):
    fu = m.raw(np.full_like(targets, u)) - targets
    a = np.full_like(targets, u)
    b = np.full_like(targets, v)
    fa = fu
    for _ in range(60):
        mid = 0.5 * (a + b)
        fm = m.raw(mid) - targets
        left = fa * fm <= 0
        b = np.where(left, mid, b)
        a = np.where(left, a, mid)
        fa = np.where(left, fa, fm)
    z = 0.5 * (a + b)
    for _ in range(4):
        df = m.deriv_raw(z)
        ok = np.isfinite(df) & (np.abs(df) > 0)
        step = np.where(ok, (m.raw(z) - targets) / np.where(ok, df, 1.0), 0.0)
        z = np.clip(z - step, a, b)
    resid = np.abs(m.raw(z) - targets)
    if np.any(resid > tol):
        raise BranchResolutionFailure(
            f"{m.name}: {int((resid > tol).sum())} batch roots above tol on [{u}, {v}]")
    return z


# ---------------------------------------------------------------------------
# orbit stepping (handles the dyadic doubling map)


def mantissa_state(x0):
    """Initial 53-bit fixed-point state for dyadic stepping."""
    u = np.floor(np.asarray(x0, dtype=float) * _MANT_SCALE).astype(np.int64)
    return np.clip(u, 0, _MANT_MASK)


def make_stepper(m, x0s, bit_rng=None):
    """Return (points0, step) where step(x) advances the batch one step.

    For exactly-dyadic maps (doubling) the binary expansion of a float
    start empties out in ~53 iterations and every orbit collapses to 0,
    which is a float artifact, not dynamics.  Such maps extend the
    expansion with seeded random bits, simulating the orbit of a
    Lebesgue-typical point; each step then agrees with eval to 1 ulp.
    """
    x0s = np.atleast_1d(m.domain.reduce(np.asarray(x0s, dtype=float)))
    if not m.dyadic_bits:
        def step(x):
            return eval_many(m, x)
        return x0s.copy(), step

    state = {"u": mantissa_state(x0s)}
    if bit_rng is None:
        # deterministic in x0: single-orbit tracing stays reproducible
        key = int(np.bitwise_xor.reduce(state["u"])) & _MANT_MASK
        bit_rng = np.random.default_rng(np.random.SeedSequence([0xD0B, key]))

    def step(x):
        bits = bit_rng.integers(0, 2, size=x0s.shape[0], dtype=np.int64)
        u = ((state["u"] << 1) & _MANT_MASK) | bits
        state["u"] = u
        return m.domain.lower + (u / _MANT_SCALE) * m.domain.length

    return x0s.copy(), step


# ---------------------------------------------------------------------------
# built-in families


def _doubling():
    dom = Domain("circle", 0.0, 1.0)

    def raw(x):
        return 2.0 * np.asarray(x, dtype=float)

    def draw(x):
        return np.full_like(np.asarray(x, dtype=float), 2.0)

    return MapModel(
        name="doubling", domain=dom, params={},
        raw=raw, deriv_raw=draw,
        critical_points=np.empty(0), branch_endpoints=np.array([0.0, 0.5, 1.0]),
        nondegeneracy=(2.5, 1.0), dyadic_bits=True)


def _intermittent(alpha=0.5):
    if not 0 < alpha:
        raise ConfigError("intermittent needs alpha > 0")
    dom = Domain("circle", 0.0, 1.0)
    a = float(alpha)

    # x + 2^a x^(1+a) written as x + x (2x)^a: exact at the half-way point
    def raw(x):
        x = np.asarray(x, dtype=float)
        left = x + x * np.power(2.0 * x, a)
        r = 1.0 - x
        right = x - r * np.power(2.0 * r, a)
        return np.where(x < 0.5, left, right)

    def draw(x):
        x = np.asarray(x, dtype=float)
        left = 1.0 + (1.0 + a) * np.power(2.0 * x, a)
        right = 1.0 + (1.0 + a) * np.power(2.0 * (1.0 - x), a)
        return np.where(x < 0.5, left, right)

    return MapModel(
        name="intermittent", domain=dom, params={"alpha": a},
        raw=raw, deriv_raw=draw,
        critical_points=np.empty(0), branch_endpoints=np.array([0.0, 0.5, 1.0]),
        nondegeneracy=(2.0 + a, 1.0))


def _quadratic(a=2.0):
    if not 0 < a <= 2:
        raise ConfigError("quadratic needs 0 < a <= 2")
    dom = Domain("interval", -1.0, 1.0)
    a = float(a)

    def raw(x):
        x = np.asarray(x, dtype=float)
        return 1.0 - a * x * x

    def draw(x):
        return -2.0 * a * np.asarray(x, dtype=float)

    B = 1.05 * max(2.0 * a, 1.0 / (2.0 * a), 1.0)
    return MapModel(
        name="quadratic", domain=dom, params={"a": a},
        raw=raw, deriv_raw=draw,
        critical_points=np.array([0.0]), branch_endpoints=np.array([-1.0, 0.0, 1.0]),
        nondegeneracy=(B, 1.0))


def prv_critical_points(alpha, beta, k0, k_max, floor=1e-12):
    """Critical points +-x_k = +-xhat e^{-k pi/beta}, k0 <= k <= k_max.

    xhat = exp(-arctan(beta/alpha)/beta).  Values below `floor` are
    dropped: they are numerically indistinguishable from the
    accumulation point at 0.
    """
    if not (0 < alpha < 1 and beta > 0 and 1 <= k0 <= k_max):
        raise ConfigError("need 0<alpha<1, beta>0, 1 <= k0 <= k_max")
    xhat = math.exp(-math.atan(beta / alpha) / beta)
    xs = [xhat * math.exp(-k * math.pi / beta) for k in range(int(k0), int(k_max) + 1)]
    xs = [x for x in xs if x >= floor]
    return sorted([-x for x in xs] + xs)


def _prv(a=1.0, alpha=0.5, beta=math.pi, k0=1, k_max=50, outer_slope=3.0):
    """Infinite-modal circle map: the oscillating core a z^alpha
    sin(beta log(1/z)) near 0, odd-extended, glued by a monotone cubic
    to an affine expanding outer piece."""
    if not (0 < alpha < 1 and beta > 0 and a > 0 and outer_slope >= 2):
        raise ConfigError("prv needs 0<alpha<1, beta>0, a>0, outer_slope >= 2")
    dom = Domain("circle", -1.0, 1.0)
    cps = prv_critical_points(alpha, beta, k0, k_max)
    xk0 = max(cps)
    eps = 2.0 * xk0 / (1.0 + math.exp(-math.pi / beta))
    yhat = xk0 + 0.6 * (eps - xk0)
    ytil = xk0 + 0.8 * (eps - xk0)
    if ytil >= 1.0 or a * yhat ** alpha > 1.0:
        raise ConfigError("prv parameters put the oscillating core outside the circle")

    def core(z):
        # a z^alpha sin(beta log(1/z)), odd in z, 0 at 0
        z = np.asarray(z, dtype=float)
        az = np.abs(z)
        safe = np.where(az > 0, az, 1.0)
        val = a * np.power(safe, alpha) * np.sin(beta * np.log(1.0 / safe))
        return np.where(az > 0, np.sign(z) * val, 0.0)

    def core_deriv(z):
        z = np.asarray(z, dtype=float)
        az = np.abs(z)
        safe = np.where(az > 0, az, 1.0)
        ll = beta * np.log(1.0 / safe)
        val = a * np.power(safe, alpha - 1.0) * (alpha * np.sin(ll) - beta * np.cos(ll))
        return np.where(az > 0, val, np.inf)

    f_yhat = float(core(np.float64(yhat)))
    d_yhat = float(core_deriv(np.float64(yhat)))
    if d_yhat <= 0:
        raise ConfigError("prv gluing expects the core rising past its last critical point")
    # lift level D for the outer piece: integer, so -1 ~ 1 stays consistent
    D = math.ceil(f_yhat + outer_slope * (1.0 - ytil)) + 1
    g_ytil = D + outer_slope * (ytil - 1.0)
    spline = CubicHermiteSpline(
        np.array([yhat, ytil]), np.array([f_yhat, g_ytil]), np.array([d_yhat, outer_slope]))
    dspline = spline.derivative()

    def raw_pos(z):
        z = np.asarray(z, dtype=float)
        out = np.where(z <= yhat, core(z), 0.0)
        mid = (z > yhat) & (z <= ytil)
        if np.any(mid):
            out = np.where(mid, spline(np.clip(z, yhat, ytil)), out)
        outer = z > ytil
        out = np.where(outer, D + outer_slope * (z - 1.0), out)
        return out

    def raw(z):
        z = np.asarray(z, dtype=float)
        return np.where(z >= 0, raw_pos(np.abs(z)), -raw_pos(np.abs(z)))

    def draw(z):
        z = np.asarray(z, dtype=float)
        az = np.abs(z)
        out = np.where(az <= yhat, core_deriv(az), 0.0)
        mid = (az > yhat) & (az <= ytil)
        if np.any(mid):
            out = np.where(mid, dspline(np.clip(az, yhat, ytil)), out)
        out = np.where(az > ytil, outer_slope, out)
        return out

    neg = [c for c in cps if c < 0]
    pos = [c for c in cps if c > 0]
    endpoints = np.array([-1.0, -ytil, -yhat] + neg + [0.0] + pos + [yhat, ytil, 1.0])
    return MapModel(
        name="prv", domain=dom,
        params={"a": a, "alpha": alpha, "beta": beta, "k0": int(k0),
                "k_max": int(k_max), "outer_slope": outer_slope},
        raw=raw, deriv_raw=draw,
        critical_points=np.array(sorted(cps + [0.0])),
        branch_endpoints=endpoints,
        nondegeneracy=None,
        meta={"xhat": math.exp(-math.atan(beta / alpha) / beta),
              "eps": eps, "yhat": yhat, "ytil": ytil, "lift": D})


_FAMILIES = {
    "doubling": _doubling,
    "intermittent": _intermittent,
    "quadratic": _quadratic,
    "prv": _prv,
}


def list_families():
    return sorted(_FAMILIES)


def make_map(family, **params):
    """Construct a built-in family from its name and parameters."""
    if family not in _FAMILIES:
        raise ConfigError(f"unknown map family {family!r}; known: {list_families()}")
    return _FAMILIES[family](**params)


def map_from_config(cfg):
    """Build a map from a config record {family, params}."""
    if not isinstance(cfg, dict) or "family" not in cfg:
        raise ConfigError("map config needs a 'family' key")
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("map params must be an object")
    try:
        return make_map(cfg["family"], **params)
    except TypeError as e:
        raise ConfigError(f"bad parameters for family {cfg['family']!r}: {e}") from e
