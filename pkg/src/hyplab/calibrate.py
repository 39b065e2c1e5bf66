"""Automatic (sigma, delta, gamma) selection and constant derivation.

sigma = exp(-lambda_hat / 3) ties the hyperbolic-time threshold to the
measured Lyapunov exponent (the detection lemma wants the expansion
constant equal to 3 log sigma^-1); delta is the largest dyadic level at
which the slow-recurrence average stays below gamma = b log(sigma^-1)/4
on test orbits.
"""

from dataclasses import dataclass

import numpy as np

from ._streams import TAG_SCAN, substream
from .errors import CalibrationFailure
from .hyptimes import HyperbolicParams, _trace_batch
from .noise import choose_constants

DELTA_GRID = [2.0 ** -k for k in range(1, 11)]
NEAR_ZERO_LYAP = 0.05


@dataclass
class CalibrationResult:
    params: HyperbolicParams
    pert: object
    lyapunov: float
    gamma: float
    delta_scan: dict
    censored: int
    warnings: list

    def summary(self):
        return {
            "sigma": self.params.sigma, "delta": self.params.delta,
            "b": self.params.b, "beta": self.params.beta, "B": self.params.B,
            "lyapunov": self.lyapunov, "gamma": self.gamma,
            "constants": dict(self.pert.constants_dict(), epsilon0=self.pert.epsilon),
            "censored_orbits": self.censored,
            "warnings": list(self.warnings),
        }


def calibrate(m, seed=0, samples=200, N=4000, burn_in=500, depth=6,
              horizon=256):
    """Monte Carlo calibration of hyperbolic-time and noise constants."""
    rng = substream(seed, TAG_SCAN)
    x0s = rng.uniform(m.domain.lower, m.domain.upper, size=samples)
    points, lid, _, valid = _trace_batch(m, x0s, N, delta=1.0,
                                         bit_rng=substream(seed, TAG_SCAN, 1))
    steps = np.arange(N)
    mask = (steps[None, :] >= burn_in) & (steps[None, :] < valid[:, None])
    censored = int((valid < N).sum())
    if not mask.any():
        raise CalibrationFailure("all calibration orbits hit the critical set")
    lam = float(np.mean(-lid[mask]))
    warnings = []
    if lam <= 0:
        raise CalibrationFailure(
            f"Lyapunov estimate {lam:.4f} <= 0: map is not numerically "
            "expanding at this horizon")
    if lam < NEAR_ZERO_LYAP:
        warnings.append(f"near-zero Lyapunov estimate {lam:.4f}; "
                        "constants will be fragile")
    sigma = float(np.exp(-lam / 3.0))
    B, beta = m.nondegeneracy if m.nondegeneracy is not None else (2.0, 1.0)
    b = min(0.5, 0.5 / beta)
    gamma = b * lam / 12.0  # = b * log(sigma^-1) / 4
    dists = m.dist_to_critical(points[:, :N])
    delta_scan = {}
    delta = None
    for cand in DELTA_GRID:
        with np.errstate(divide="ignore"):
            rec = np.where(dists < cand, -np.log(np.maximum(dists, 1e-300)), 0.0)
        avg = float(np.mean(rec[mask]))
        delta_scan[cand] = avg
        if avg < gamma:
            delta = cand
            break
    if delta is None:
        raise CalibrationFailure(
            "no delta in the dyadic grid keeps the slow-recurrence average "
            f"below gamma={gamma:.4g}")
    params = HyperbolicParams(sigma=sigma, delta=delta, beta=beta, B=B)
    pert = choose_constants(m, params, gamma, depth=depth, horizon=horizon)
    return CalibrationResult(params=params, pert=pert, lyapunov=lam,
                             gamma=gamma, delta_scan=delta_scan,
                             censored=censored, warnings=warnings)
