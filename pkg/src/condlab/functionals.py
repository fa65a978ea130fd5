"""Local functionals of the environment: declaration, evaluation, norms.

A local functional reads finitely many edges around the origin (its stencil)
and maps their conductances to a real number.  Spatial translates of one
functional across a field produce the site functions that every operator and
spectral routine consumes.
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from .environment import sample_field
from .errors import AliasingError, DeclarationError, ParameterError
from .util import mean_and_stderr

__all__ = [
    "LocalFunctional",
    "local_drift",
    "centered_edge",
    "contract_example",
    "polynomial_functional",
    "functional_by_name",
    "evaluate_at",
    "evaluate_at_sites",
    "evaluate_all",
    "spatial_sum",
    "box_sum_field",
    "box_sites",
    "total_oscillation",
    "decay_norm",
    "BoxVarianceScan",
    "box_variance_scan",
]


class LocalFunctional:
    """A finite-stencil function of the environment.

    stencil is a tuple of (site offset, axis) pairs: entry k reads the edge
    from offset to offset + e_axis, relative to the evaluation point.  The
    evaluator maps the stencil's conductance values, stacked on axis 0 and
    vectorized over any trailing shape, to the functional values.

    oscillation[k] bounds how much the value can move when stencil edge k
    alone changes over the law's support; sup_bound bounds |f| outright.
    Both are optional, as is the analytic mean in mean_hint.
    """

    def __init__(self, name, stencil, evaluator, oscillation=None, sup_bound=None, mean_hint=None):
        stencil = tuple((tuple(int(c) for c in off), int(axis)) for off, axis in stencil)
        if not stencil:
            raise ParameterError("stencil must contain at least one edge")
        self.d = len(stencil[0][0])
        for off, axis in stencil:
            if len(off) != self.d:
                raise ParameterError("all stencil offsets must share one dimension")
            if not 0 <= axis < self.d:
                raise ParameterError(f"stencil axis {axis} out of range for d={self.d}")
        if len(set(stencil)) != len(stencil):
            raise ParameterError("stencil edges must be distinct")
        self.name = name
        self.stencil = stencil
        self.evaluator = evaluator
        if oscillation is not None:
            oscillation = tuple(float(v) for v in oscillation)
            if len(oscillation) != len(stencil):
                raise ParameterError("need one oscillation bound per stencil edge")
            if any(v < 0 for v in oscillation):
                raise ParameterError("oscillation bounds must be >= 0")
        self.oscillation = oscillation
        self.sup_bound = None if sup_bound is None else float(sup_bound)
        self.mean_hint = None if mean_hint is None else float(mean_hint)

    @property
    def radius(self):
        """Largest coordinate magnitude the stencil touches."""
        r = 0
        for off, axis in self.stencil:
            r = max(r, max(abs(c) for c in off))
            r = max(r, max(abs(c + (1 if i == axis else 0)) for i, c in enumerate(off)))
        return r

    def __repr__(self):
        return f"LocalFunctional({self.name!r}, {len(self.stencil)} edges, d={self.d})"


def _require_fit(f, lattice, extra=0):
    # the stencil (plus any surrounding box) may not wrap onto itself
    if 2 * (f.radius + extra) >= lattice.n:
        raise AliasingError(
            f"stencil radius {f.radius} plus box {extra} does not fit on a period-{lattice.n} torus"
        )
    if f.d != lattice.d:
        raise ParameterError(f"functional is {f.d}-dimensional, lattice is {lattice.d}-dimensional")


def evaluate_at_sites(f, field, sites):
    """Functional values at an array of evaluation points."""
    lat = field.lattice
    _require_fit(f, lat)
    sites = np.asarray(sites)
    reads = np.empty((len(f.stencil),) + sites.shape)
    for k, (off, axis) in enumerate(f.stencil):
        reads[k] = field.omega[axis][lat.offset_index(sites, off)]
    return np.asarray(f.evaluator(reads), dtype=float)


def evaluate_at(f, field, x):
    """f evaluated on the environment recentered at site x."""
    lat = field.lattice
    if not isinstance(x, (int, np.integer)):
        x = lat.site_index(x)
    return float(evaluate_at_sites(f, field, np.array([int(x)]))[0])


def evaluate_all(f, field):
    """Values of f at every site of the torus, as one array."""
    return evaluate_at_sites(f, field, np.arange(field.lattice.n_sites))


def box_sites(lattice, n_box, center=0):
    """Indices of the box of radius n_box around a center site."""
    if n_box < 0:
        raise ParameterError(f"box radius must be >= 0, got {n_box}")
    grids = np.meshgrid(*[np.arange(-n_box, n_box + 1)] * lattice.d, indexing="ij")
    offsets = np.stack([g.ravel() for g in grids])
    base = lattice.site_coords(center).reshape(lattice.d, 1)
    coords = (base + offsets) % lattice.n
    return np.ravel_multi_index(tuple(coords), lattice.shape)


def spatial_sum(f, field, n_box, center=0):
    """Sum of f over all translates in the box of radius n_box around center."""
    lat = field.lattice
    _require_fit(f, lat, extra=n_box)
    if not isinstance(center, (int, np.integer)):
        center = lat.site_index(center)
    values = evaluate_at_sites(f, field, box_sites(lat, n_box, int(center)))
    return math.fsum(values.tolist())


def box_sum_field(values, lattice, n_box):
    """Box sums of a site array at every center, via separable sliding sums."""
    grid = np.asarray(values, dtype=float).reshape(lattice.shape)
    for axis in range(lattice.d):
        grid = sum(np.roll(grid, -k, axis=axis) for k in range(-n_box, n_box + 1))
    return grid.ravel()


# ---------------------------------------------------------------------------
# Registry


def _zero_offset(d):
    return (0,) * d


def local_drift(d, law=None):
    """Difference of the two axis-1 edges at the origin.

    Mean zero under any i.i.d. law; bounds filled in when the law is given.
    """
    back = tuple(-1 if i == 0 else 0 for i in range(d))
    stencil = ((_zero_offset(d), 0), (back, 0))
    osc = sup = None
    if law is not None:
        lo, hi = law.support()
        osc = (hi - lo, hi - lo)
        sup = hi - lo
    return LocalFunctional("drift", stencil, lambda v: v[0] - v[1], osc, sup, mean_hint=0.0)


def centered_edge(d, law):
    """The conductance of the origin's forward axis-1 edge, minus its mean."""
    m = law.mean()
    lo, hi = law.support()
    return LocalFunctional(
        "edge",
        ((_zero_offset(d), 0),),
        lambda v: v[0] - m,
        oscillation=(hi - lo,),
        sup_bound=max(hi - m, m - lo),
        mean_hint=0.0,
    )


def contract_example(law=None):
    """The d=1 functional reading edge (-1,0) plus the square of edge (2,3)."""
    stencil = (((-1,), 0), ((2,), 0))
    osc = sup = hint = None
    if law is not None:
        lo, hi = law.support()
        osc = (hi - lo, hi * hi - lo * lo)
        sup = hi + hi * hi
        hint = law.moment(1) + law.moment(2)
    return LocalFunctional("contract-example", stencil, lambda v: v[0] + v[1] ** 2, osc, sup, hint)


_EDGE_FACTOR = re.compile(r"^e\[(?P<off>-?\d+(?:,-?\d+)*);(?P<axis>\d+)\](?:\^(?P<pow>\d+))?$")


def polynomial_functional(expr, d, law=None):
    """Polynomial in stencil edges from a descriptor string.

    Grammar: terms joined by + or -; a term is factors joined by '*'; a factor
    is either a number or e[o1,...,od;axis] optionally raised with ^k.
    Example for d=1: "e[0;0] + 2*e[1;0]^2 - 3.5".
    """
    body = expr.strip()
    if not body:
        raise ParameterError("empty polynomial descriptor")
    chunks = re.split(r"(?=[+-])", body.replace(" ", ""))
    terms = []
    for chunk in chunks:
        if not chunk:
            continue
        sign = 1.0
        if chunk[0] in "+-":
            sign = -1.0 if chunk[0] == "-" else 1.0
            chunk = chunk[1:]
        if not chunk:
            raise ParameterError(f"dangling sign in polynomial {expr!r}")
        coef = sign
        powers = {}
        for factor in chunk.split("*"):
            m = _EDGE_FACTOR.match(factor)
            if m:
                off = tuple(int(c) for c in m.group("off").split(","))
                if len(off) != d:
                    raise ParameterError(f"offset {off} has {len(off)} coordinates, expected {d}")
                axis = int(m.group("axis"))
                if axis >= d:
                    raise ParameterError(f"axis {axis} out of range for d={d}")
                k = int(m.group("pow") or 1)
                powers[(off, axis)] = powers.get((off, axis), 0) + k
            else:
                try:
                    coef *= float(factor)
                except ValueError:
                    raise ParameterError(f"bad factor {factor!r} in polynomial {expr!r}")
        terms.append((coef, powers))
    edges = sorted({e for _, powers in terms for e in powers})
    if not edges:
        raise ParameterError("polynomial reads no edges; use a constant functional instead")
    index = {e: i for i, e in enumerate(edges)}

    def evaluator(v):
        out = np.zeros(v.shape[1:])
        for coef, powers in terms:
            part = np.full(v.shape[1:], coef)
            for e, k in powers.items():
                part = part * v[index[e]] ** k
            out += part
        return out

    osc = sup = hint = None
    if law is not None:
        lo, hi = law.support()
        osc = []
        for e in edges:
            bound = 0.0
            for coef, powers in terms:
                if e in powers:
                    rest = math.prod(hi**k for e2, k in powers.items() if e2 != e)
                    bound += abs(coef) * (hi ** powers[e] - lo ** powers[e]) * rest
            osc.append(bound)
        sup = sum(abs(c) * math.prod(hi**k for k in p.values()) for c, p in terms)
        hint = sum(c * math.prod(law.moment(k) for k in p.values()) for c, p in terms)
    stencil = tuple(edges)
    return LocalFunctional(f"poly:{body}", stencil, evaluator, osc, sup, hint)


def functional_by_name(name, d, law=None):
    """Look up a functional by its registry name or poly: descriptor."""
    name = name.strip()
    if name == "drift":
        return local_drift(d, law)
    if name == "edge":
        if law is None:
            raise ParameterError("the edge functional needs a law for its centering constant")
        return centered_edge(d, law)
    if name == "contract-example":
        if d != 1:
            raise ParameterError("contract-example is defined for d=1 only")
        return contract_example(law)
    if name.startswith("poly:"):
        return polynomial_functional(name[5:], d, law)
    raise ParameterError(f"unknown functional {name!r} (drift, edge, contract-example, poly:...)")


# ---------------------------------------------------------------------------
# Norms


def total_oscillation(f):
    """Sum of the per-edge oscillation bounds."""
    if f.oscillation is None:
        raise DeclarationError(f"functional {f.name!r} has no declared oscillation bounds")
    return float(sum(f.oscillation))


def decay_norm(f):
    """Squared total oscillation plus squared sup bound.

    This is the variance proxy entering the decay estimates; it needs both
    declared bounds and is infinite (an error here) for unbounded laws.
    """
    if f.sup_bound is None:
        raise DeclarationError(f"functional {f.name!r} has no declared sup bound")
    return total_oscillation(f) ** 2 + f.sup_bound**2


# ---------------------------------------------------------------------------
# Box-variance scan


@dataclass
class BoxVarianceScan:
    """Per-box-size table of E[(box sum)^2]/(box size), with its supremum."""

    ns: np.ndarray
    values: np.ndarray
    stderrs: np.ndarray
    sup: float
    sup_n: int
    divergent: bool


def box_variance_scan(f, law, lattice, n_max, realizations, seed):
    """Scan E[(S_n f)^2]/|B_n| over n = 0..n_max on fresh i.i.d. fields.

    Each realization contributes the box sums around one fixed center of a
    freshly sampled field, so realizations are exactly independent.  The scan
    is flagged divergent when a nonzero analytic mean is declared or when the
    last three table entries grow by more than three pooled standard errors.
    """
    _require_fit(f, lattice, extra=n_max)
    if realizations < 2:
        raise ParameterError("need at least 2 realizations for standard errors")
    shells = []
    for n in range(n_max + 1):
        box = set(box_sites(lattice, n).tolist())
        inner = set(box_sites(lattice, n - 1).tolist()) if n else set()
        shells.append(np.array(sorted(box - inner)))
    seeds = np.random.SeedSequence(int(seed)).generate_state(realizations, dtype=np.uint64)
    samples = np.empty((realizations, n_max + 1))
    for r in range(realizations):
        field = sample_field(law, lattice, int(seeds[r]))
        g = evaluate_all(f, field)
        acc = 0.0
        for n in range(n_max + 1):
            acc += float(g[shells[n]].sum())
            samples[r, n] = acc * acc
    mean, se = mean_and_stderr(samples, axis=0)
    sizes = np.array([(2 * n + 1) ** lattice.d for n in range(n_max + 1)], dtype=float)
    values = mean / sizes
    stderrs = se / sizes
    sup_n = int(np.argmax(values))
    divergent = f.mean_hint is not None and abs(f.mean_hint) > 0
    if not divergent and n_max >= 2:
        a, b, c = values[-3], values[-2], values[-1]
        pooled = math.sqrt(stderrs[-3] ** 2 + stderrs[-2] ** 2 + stderrs[-1] ** 2)
        divergent = bool(c > b > a and (c - a) > 3 * pooled)
    return BoxVarianceScan(
        ns=np.arange(n_max + 1),
        values=values,
        stderrs=stderrs,
        sup=float(values[sup_n]),
        sup_n=sup_n,
        divergent=divergent,
    )
