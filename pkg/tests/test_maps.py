import math

import numpy as np
import pytest

import hyplab as hl
from hyplab.maps import deriv_many_unchecked, preimages_many


@pytest.fixture(scope="module")
def doubling():
    return hl.make_map("doubling")


@pytest.fixture(scope="module")
def interm05():
    return hl.make_map("intermittent", alpha=0.5)


@pytest.fixture(scope="module")
def quad2():
    return hl.make_map("quadratic", a=2.0)


@pytest.fixture(scope="module")
def prv():
    return hl.make_map("prv")


ALL = ["doubling", "interm05", "quad2", "prv"]


def test_eval_examples(doubling, interm05):
    assert hl.eval_point(doubling, 0.3) == pytest.approx(0.6, abs=0)
    # direct evaluation of the intermittent formula
    assert hl.eval_point(interm05, 0.5) == 0.0
    assert hl.eval_point(interm05, 0.25) == pytest.approx(0.42677669529663687, abs=1e-15)


def test_deriv_examples(doubling, interm05, quad2):
    assert hl.deriv(interm05, 0.0) == 1.0  # neutral fixed point
    assert hl.deriv(doubling, 0.123) == 2.0
    with pytest.raises(hl.CriticalPointError):
        hl.deriv(quad2, 0.0)


def test_truncated_dist(doubling, quad2):
    # below threshold: the raw distance; above: 1; empty set: 1
    assert hl.truncated_dist(quad2, 0.05, 0.1) == pytest.approx(0.05)
    assert hl.truncated_dist(quad2, 0.3, 0.1) == 1.0
    assert hl.truncated_dist(doubling, 0.77, 0.1) == 1.0
    with pytest.raises(hl.ConfigError):
        hl.truncated_dist(doubling, 0.5, 0.0)


def test_preimage_examples(doubling, interm05, quad2):
    assert hl.preimages(doubling, 0.5) == pytest.approx([0.25, 0.75])
    assert hl.preimages(quad2, 1.0) == pytest.approx([0.0])
    # brute-force scan of both intermittent branches finds exactly {0, 0.5}
    assert hl.preimages(interm05, 0.0) == pytest.approx([0.0, 0.5])


def test_prv_critical_points():
    pts = hl.prv_critical_points(0.5, math.pi, 1, 6)
    xhat = math.exp(-math.atan(2 * math.pi) / math.pi)
    assert xhat == pytest.approx(0.6377807085147449, abs=1e-12)
    pos = [p for p in pts if p > 0]
    neg = [p for p in pts if p < 0]
    assert len(pos) == len(neg) == 6
    assert max(pos) == pytest.approx(xhat * math.exp(-math.pi / math.pi))
    # consecutive ratio forced by the exponential spacing
    ratios = np.array(sorted(pos, reverse=True)[1:]) / np.array(sorted(pos, reverse=True)[:-1])
    assert ratios == pytest.approx(math.exp(-1.0), rel=1e-12)
    # symmetric list
    assert sorted(-p for p in neg) == pytest.approx(sorted(pos))


@pytest.mark.parametrize("name", ALL)
def test_branch_monotonicity(name, request):
    m = request.getfixturevalue(name)
    rng = np.random.default_rng(7)
    for lo, hi in m.branches:
        xs = np.sort(rng.uniform(lo, hi, 1000))
        vals = m.raw(xs)
        d = np.diff(vals)
        # strictly monotone on each open branch (tiny prv pseudo-branches
        # next to the accumulation point are below sampling resolution)
        if hi - lo < 1e-9:
            continue
        assert np.all(d > 0) or np.all(d < 0)


@pytest.mark.parametrize("name", ALL)
def test_derivative_consistency(name, request):
    m = request.getfixturevalue(name)
    rng = np.random.default_rng(11)
    xs = rng.uniform(m.domain.lower, m.domain.upper, 4000)
    margin = 1e-3 * m.domain.length
    keep = m.dist_to_critical(xs) > margin
    # keep clear of branch joints too: the finite difference straddles them
    for e in m.branch_endpoints:
        keep &= np.abs(xs - e) > 1e-5 * m.domain.length
    xs = xs[keep][:1000]
    h = 1e-7 * m.domain.length
    fd = (m.raw(xs + h) - m.raw(xs - h)) / (2 * h)
    cf = deriv_many_unchecked(m, xs)
    rel = np.abs(fd - cf) / np.maximum(np.abs(cf), 1e-9)
    assert rel.max() < 1e-6


@pytest.mark.parametrize("name", ALL)
def test_preimage_correctness_and_completeness(name, request):
    m = request.getfixturevalue(name)
    rng = np.random.default_rng(13)
    dom = m.domain
    tol = 1e-10 * dom.length
    for y in rng.uniform(dom.lower, dom.upper, 12):
        roots = hl.preimages(m, y, tol)
        for z in roots:
            assert dom.distance(hl.eval_point(m, z), dom.reduce(y)) <= tol * 1.01
        # brute-force grid scan: every sign change of f - y (mod period)
        # lies next to a reported root
        grid = np.linspace(dom.lower, dom.upper, 100001)
        vals = hl.eval_many(m, grid)
        diff = dom.distance(vals, dom.reduce(y))
        near = diff < 2e-4 * dom.length
        if not roots:
            # no roots: the grid scan must not find a near-exact hit
            assert diff.min() > 1e-6 * dom.length
            continue
        hit_idx = np.nonzero(near)[0]
        roots_arr = np.asarray(roots)
        for i in hit_idx:
            if diff[i] < 1e-7 * dom.length:
                assert dom.distance(grid[i], roots_arr).min() < 1e-3 * dom.length


def test_preimages_many_matches_scalar(interm05, quad2):
    rng = np.random.default_rng(3)
    for m in (interm05, quad2):
        ys = rng.uniform(m.domain.lower, m.domain.upper, 40)
        parents, roots = preimages_many(m, ys)
        for i, y in enumerate(ys):
            mine = np.sort(roots[parents == i])
            ref = np.asarray(hl.preimages(m, y))
            assert mine == pytest.approx(ref, abs=1e-8)


@pytest.mark.parametrize("name", ["quad2", "interm05"])
def test_nondegeneracy_sampling(name, request):
    # (S1) two-sided power bound with the stored constants, distances
    # truncated at 1 so the local-diffeomorphism case reads 1/B <= |Df| <= B
    m = request.getfixturevalue(name)
    B, beta = m.nondegeneracy
    rng = np.random.default_rng(5)
    xs = rng.uniform(m.domain.lower, m.domain.upper, 1000)
    xs = xs[m.dist_to_critical(xs) > m.tol_crit * 10]
    d = np.minimum(m.dist_to_critical(xs), 1.0)
    df = np.abs(deriv_many_unchecked(m, xs))
    assert np.all(df >= d ** beta / B - 1e-12)
    assert np.all(df <= B * d ** -beta + 1e-12)


def test_domain_reduce_and_distance():
    dom = hl.Domain("circle", 0.0, 1.0)
    assert dom.reduce(1.25) == pytest.approx(0.25)
    assert dom.reduce(-0.25) == pytest.approx(0.75)
    assert dom.distance(0.1, 0.9) == pytest.approx(0.2)
    interval = hl.Domain("interval", -1.0, 1.0)
    assert interval.distance(-1.0, 1.0) == pytest.approx(2.0)
    with pytest.raises(hl.ConfigError):
        hl.Domain("circle", 1.0, 0.0)


def test_map_from_config_errors():
    with pytest.raises(hl.ConfigError):
        hl.map_from_config({"params": {}})
    with pytest.raises(hl.ConfigError):
        hl.map_from_config({"family": "nope"})
    with pytest.raises(hl.ConfigError):
        hl.map_from_config({"family": "quadratic", "params": {"bogus": 1}})
    m = hl.map_from_config({"family": "intermittent", "params": {"alpha": 0.1}})
    assert m.params["alpha"] == 0.1
