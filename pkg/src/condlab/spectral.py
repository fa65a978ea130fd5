"""Projected spectral measures of the walk generator and their functionals.

On a finite torus the spectral measure of -L projected on a site function is
purely atomic, so variances, resolvent moments, and effective-diffusivity
error terms are all exact finite sums over (eigenvalue, weight) atoms.  No
quadrature enters anywhere in this module.
"""

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .errors import NonergodicError, ParameterError
from .operators import as_values, dirichlet_form

__all__ = [
    "SpectralMeasure",
    "spectral_measure",
    "PowerLawFit",
    "DecayCurve",
    "variance_curve",
    "spectral_tail",
    "asymptotic_variance",
    "finite_time_deficit",
    "additive_variance",
    "rate_scale",
    "corrector_error_term",
    "resolvent_second_moment",
    "DiffusivityEstimates",
    "diffusivity_estimators",
    "synthetic_power_measure",
    "save_measure_csv",
    "load_measure_csv",
    "TailDecayAgreement",
    "tail_decay_agreement",
]

ZERO_EIGENVALUE = 1e-12
ZERO_WEIGHT = 1e-10


@dataclass(frozen=True)
class SpectralMeasure:
    """Atomic measure (eigenvalue, weight) pairs, eigenvalues ascending."""

    lambdas: np.ndarray
    weights: np.ndarray
    centered: bool = False
    removed_mean: float = 0.0

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if lam.shape != w.shape or lam.ndim != 1:
            raise ParameterError("eigenvalues and weights must be matching 1-d arrays")
        if np.any(np.diff(lam) < 0):
            raise ParameterError("eigenvalues must be sorted ascending")
        if np.any(lam < 0) or np.any(w < 0):
            raise ParameterError("eigenvalues and weights must be >= 0")
        lam.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "weights", w)

    @property
    def total_mass(self):
        return float(self.weights.sum())

    def zero_mass(self):
        """Weight carried by atoms at (numerically) zero eigenvalue."""
        return float(self.weights[self.lambdas < ZERO_EIGENVALUE].sum())


def spectral_measure(op, g, center=True):
    """Measure representing g in the eigenbasis of -L.

    Weights are squared eigenprojections divided by the site count, so the
    total mass is the site-averaged squared norm of g.  The site mean is
    subtracted first unless center=False; the removed mean is reported on
    the result.
    """
    v = as_values(g).copy()
    mean = float(v.mean())
    if center:
        v -= mean
    lam, vec = op.eigensystem()
    w = (vec.T @ v) ** 2 / op.lattice.n_sites
    return SpectralMeasure(lam, w, centered=center, removed_mean=mean if center else 0.0)


def _positive_atoms(m):
    """Split off zero atoms; error if they carry real weight."""
    mask = m.lambdas >= ZERO_EIGENVALUE
    dropped = float(m.weights[~mask].sum())
    if dropped > ZERO_WEIGHT:
        raise NonergodicError(
            f"measure carries weight {dropped:.3e} at eigenvalue 0; center the function first"
        )
    return m.lambdas[mask], m.weights[mask]


@dataclass
class PowerLawFit:
    exponent: float
    intercept: float
    window: tuple
    residual: float
    ci_low: float = math.nan
    ci_high: float = math.nan
    curvature: float = 0.0
    curved: bool = False


@dataclass
class DecayCurve:
    """Sampled values of a decaying time curve, with an optional power-law fit."""

    times: np.ndarray
    values: np.ndarray
    stderrs: Optional[np.ndarray] = None
    fit: Optional[PowerLawFit] = None
    label: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.stderrs is None:
            self.stderrs = np.zeros_like(self.values)
        else:
            self.stderrs = np.asarray(self.stderrs, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ParameterError("curve times must be strictly increasing")
        if np.any(self.values < 0):
            raise ParameterError("curve values must be >= 0")


def variance_curve(m, times):
    """Exact variance decay sum_i w_i e^{-2 lambda_i t} at the given times."""
    t = np.asarray(times, dtype=float)
    if np.any(t < 0):
        raise ParameterError("times must be >= 0")
    vals = np.exp(-2.0 * np.outer(t, m.lambdas)) @ m.weights
    return DecayCurve(t, np.maximum(vals, 0.0), label="variance")


def variance_at(m, t):
    return float(np.dot(m.weights, np.exp(-2.0 * t * m.lambdas)))


def spectral_tail(m, delta):
    """Mass of 1/lambda below the cutoff: sum of w/lambda over lambda <= delta."""
    lam, w = _positive_atoms(m)
    mask = lam <= delta
    return float(np.sum(w[mask] / lam[mask]))


def asymptotic_variance(m):
    """Long-run variance rate 2 sum w/lambda of the stationary additive functional."""
    lam, w = _positive_atoms(m)
    return 2.0 * float(np.sum(w / lam))


def finite_time_deficit(m, t):
    """How far the time-t additive variance lags its asymptote, per unit time.

    Equals 2 sum w (1 - e^{-lambda t}) / (lambda^2 t); nonnegative, at most
    the asymptotic variance, and vanishing as t grows.
    """
    if t <= 0:
        raise ParameterError(f"time must be > 0, got {t}")
    lam, w = _positive_atoms(m)
    return 2.0 * float(np.sum(w * (-np.expm1(-lam * t)) / (lam * lam * t)))


def additive_variance(m, t):
    """Variance of the integral of the observable along the environment path.

    The atom integrand 2(e^{-lambda t} - 1 + lambda t)/lambda^2 stays bounded
    as lambda -> 0 (limit t^2), so zero atoms contribute w t^2 and no
    ergodicity guard is needed.
    """
    if t < 0:
        raise ParameterError(f"time must be >= 0, got {t}")
    lam = m.lambdas
    w = m.weights
    zero = lam < ZERO_EIGENVALUE
    out = float(np.sum(w[zero])) * t * t
    lp, wp = lam[~zero], w[~zero]
    if lp.size:
        x = lp * t
        out += 2.0 * float(np.sum(wp * (np.expm1(-x) + x) / (lp * lp)))
    return out


def rate_scale(alpha, t):
    """Growth scale of additive-functional variance: t^(alpha-1) below alpha=2,
    t/ln+(t) at 2, linear t above 2."""
    if alpha <= 1:
        raise ParameterError(f"exponent must be > 1, got {alpha}")
    if t < 0:
        raise ParameterError(f"time must be >= 0, got {t}")
    if alpha < 2:
        return t ** (alpha - 1.0)
    if alpha == 2:
        return t / max(1.0, math.log(t)) if t > 0 else 0.0
    return t


def corrector_error_term(m, k, mu):
    """Signed resolvent-approximation error sum w (mu^2 + (2-k) lambda mu) / (lambda (lambda+mu)^2)."""
    if mu <= 0:
        raise ParameterError(f"mu must be > 0, got {mu}")
    lam, w = _positive_atoms(m)
    num = mu * mu + (2.0 - k) * lam * mu
    return float(np.sum(w * num / (lam * (lam + mu) ** 2)))


def resolvent_second_moment(m, mu):
    """Mean square of the resolvent image: sum w/(lambda+mu)^2."""
    if mu <= 0:
        raise ParameterError(f"mu must be > 0, got {mu}")
    return float(np.sum(m.weights / (m.lambdas + mu) ** 2))


# ---------------------------------------------------------------------------
# Effective-diffusivity estimators


@dataclass(frozen=True)
class DiffusivityEstimates:
    """The three algebraically chained estimates of half the diffusivity."""

    a0: float
    a1: float
    a2: float
    phi_second_moment: float
    energy: float
    edge_mean: float

    def chain_residuals(self, mu):
        """Relative defects of a0 = a1 + mu E[phi^2] = a2 + 2 mu E[phi^2]."""
        scale = max(abs(self.a0), 1e-300)
        r1 = abs(self.a0 - self.a1 - mu * self.phi_second_moment) / scale
        r2 = abs(self.a0 - self.a2 - 2.0 * mu * self.phi_second_moment) / scale
        return r1, r2


def diffusivity_estimators(field, phi, op=None):
    """Evaluate the three diffusivity estimators at a trial corrector phi.

    All expectations are site averages over the torus; axis 0 plays the role
    of the distinguished direction.
    """
    from .operators import build_generator

    lat = field.lattice
    v = as_values(phi)
    if v.shape != (lat.n_sites,):
        raise ParameterError(f"corrector has {v.shape} values for {lat.n_sites} sites")
    if op is None:
        op = build_generator(field, "conductance")
    n = lat.n_sites
    w0 = field.omega[0]
    grad0 = v[lat._fwd[0]] - v
    edge_mean = float(w0.mean())
    energy = dirichlet_form(op, v)
    a0 = edge_mean - energy
    a1 = float(np.dot(w0, 1.0 + grad0)) / n
    a2 = float(np.dot(w0, (1.0 + grad0) ** 2)) / n
    for axis in range(1, lat.d):
        diff = v[lat._fwd[axis]] - v
        a2 += float(np.dot(field.omega[axis], diff * diff)) / n
    phi_sq = float(np.dot(v, v)) / n
    return DiffusivityEstimates(a0, a1, a2, phi_sq, energy, edge_mean)


# ---------------------------------------------------------------------------
# Synthetic measures and fixtures


def synthetic_power_measure(alpha, atoms=10000, lo=1e-6, hi=1.0):
    """Discretize the density lambda^(alpha-1) d lambda on [lo, hi].

    Atoms sit at geometric midpoints and carry the exact bin integrals, so
    tail sums converge to their closed forms as the atom count grows.
    """
    if alpha <= 0:
        raise ParameterError(f"density exponent must be > 0, got {alpha}")
    if not (0 < lo < hi):
        raise ParameterError("need 0 < lo < hi")
    edges = lo * (hi / lo) ** (np.arange(atoms + 1) / atoms)
    lam = np.sqrt(edges[:-1] * edges[1:])
    w = (edges[1:] ** alpha - edges[:-1] ** alpha) / alpha
    return SpectralMeasure(lam, w)


_MEASURE_MAGIC = "# condlab-csv v1 measure"


def save_measure_csv(m, path):
    with open(path, "w") as fh:
        fh.write(_MEASURE_MAGIC + "\n")
        fh.write("lambda,weight\n")
        for lam, w in zip(m.lambdas, m.weights):
            # plain float repr round-trips exactly; numpy scalar repr does not
            fh.write(f"{float(lam)!r},{float(w)!r}\n")


def load_measure_csv(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _MEASURE_MAGIC:
        raise ParameterError(f"{path}: not a condlab measure file")
    if lines[1] != "lambda,weight":
        raise ParameterError(f"{path}: unexpected measure header {lines[1]!r}")
    rows = [tuple(float(tok) for tok in ln.split(",")) for ln in lines[2:]]
    rows.sort()
    lam = np.array([r[0] for r in rows])
    w = np.array([r[1] for r in rows])
    return SpectralMeasure(lam, w)


# ---------------------------------------------------------------------------
# Decay/tail equivalence


@dataclass
class TailDecayAgreement:
    """Grid verdicts for the decay-exponent / tail-exponent equivalence."""

    alpha: float
    times: np.ndarray
    time_stat: np.ndarray
    deltas: np.ndarray
    tail_stat: np.ndarray
    time_divergent: bool
    tail_divergent: bool
    agree: bool
    forward_bound_ok: bool
    reverse_bound_ok: bool


def _grid_divergent(stat):
    # grows-at-scale test: divergent when the overall peak dwarfs the peak
    # over the first half of the grid
    stat = np.asarray(stat, dtype=float)
    if np.any(np.isinf(stat)):
        return True
    ref = float(np.max(stat[: max(3, len(stat) // 2)]))
    peak = float(np.max(stat))
    if ref <= 0.0:
        return peak > 0.0
    return peak > 4.0 * ref


def tail_decay_agreement(m, alpha, max_exp=20):
    """Check that the variance-decay and tail-mass views of an exponent agree.

    Computes t^alpha var(t) over t = 2^0..2^max_exp and delta^(1-alpha)
    tail(delta) over delta = 2^0..2^-max_exp, classifies each side as bounded
    or divergent on its grid, and also asserts the two-sided quantitative
    bounds connecting them: dyadic-block domination of the variance by tail
    values, and the atomwise e^2-smoothing bound of the tail by the exact
    integrated variance sum w e^{-2 lambda/delta}/lambda.
    """
    if alpha <= 1:
        raise ParameterError(f"equivalence exponent must be > 1, got {alpha}")
    times = 2.0 ** np.arange(0, max_exp + 1)
    deltas = 2.0 ** -np.arange(0, max_exp + 1)

    zero_w = m.zero_mass()
    has_zero = zero_w > ZERO_WEIGHT
    pos = m.lambdas >= ZERO_EIGENVALUE
    lam, w = m.lambdas[pos], m.weights[pos]
    # both statistics use the measure modulo its null part; sub-threshold
    # zero weight is centering residue and would fake t^alpha growth
    base = zero_w if has_zero else 0.0
    time_stat = np.array(
        [t**alpha * (float(w @ np.exp(-2.0 * lam * t)) + base) for t in times]
    )

    def raw_tail(delta):
        mask = lam <= delta
        return float(np.sum(w[mask] / lam[mask]))

    if has_zero:
        tail_stat = np.full_like(deltas, np.inf)
    else:
        tail_stat = np.array([d ** (1.0 - alpha) * raw_tail(d) for d in deltas])

    # genuine mass at 0 makes sup t^alpha var(t) infinite outright
    time_div = has_zero or _grid_divergent(time_stat)
    tail_div = has_zero or _grid_divergent(tail_stat)

    forward_ok = reverse_ok = True
    if not has_zero and lam.size:
        lam_max = float(lam[-1])
        for t, stat in zip(times, time_stat):
            # dyadic lambda blocks: each block (a, 2a] contributes at most
            # e^{-2at} * 2a * tail(2a), and lambda <= 1/t contributes tail(1/t)/t
            rhs = raw_tail(1.0 / t)
            j = 0
            while True:
                a = 2.0**j / t
                rhs += math.exp(-2.0 * a * t) * 2.0 * a * t * raw_tail(min(2.0 * a, lam_max))
                if 2.0 * a >= lam_max or j > 80:
                    break
                j += 1
            if stat > t ** (alpha - 1.0) * rhs * (1 + 1e-9) + 1e-300:
                forward_ok = False
        for d in deltas:
            lhs = raw_tail(d)
            rhs = math.e**2 * float(np.sum(w * np.exp(-2.0 * lam / d) / lam))
            if lhs > rhs * (1 + 1e-9) + 1e-300:
                reverse_ok = False
    return TailDecayAgreement(
        alpha=alpha,
        times=times,
        time_stat=time_stat,
        deltas=deltas,
        tail_stat=tail_stat,
        time_divergent=time_div,
        tail_divergent=tail_div,
        agree=time_div == tail_div,
        forward_bound_ok=forward_ok,
        reverse_bound_ok=reverse_ok,
    )
