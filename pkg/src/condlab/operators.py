"""Finite-torus linear algebra for the walk generators.

The generator acts on site functions g(x); symmetry of the conductances makes
it self-adjoint for the uniform measure on sites, so everything downstream
(semigroups, resolvents, spectral measures) reduces to symmetric linear
algebra on n^d points.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import scipy.stats

from .errors import BackendError, ParameterError, SolverError

__all__ = [
    "DENSE_LIMIT",
    "TorusOperator",
    "FieldFunction",
    "as_values",
    "build_generator",
    "simple_generator",
    "semigroup_apply",
    "resolvent_solve",
    "dirichlet_form",
    "box_spectral_gap",
    "sobolev_constant",
    "save_operator_coo",
    "save_spectrum_csv",
]

# largest site count for which a full eigendecomposition is attempted
DENSE_LIMIT = 4096


@dataclass
class FieldFunction:
    """A function of the environment realized site by site on one torus."""

    values: np.ndarray
    lattice: object

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.lattice.n_sites,):
            raise ParameterError(
                f"function has {self.values.shape} values for {self.lattice.n_sites} sites"
            )

    def mean(self):
        return float(self.values.mean())

    def __array__(self, dtype=None, copy=None):
        return np.array(self.values, dtype=dtype)


def as_values(g):
    if isinstance(g, FieldFunction):
        return g.values
    return np.asarray(g, dtype=float)


class TorusOperator:
    """Walk generator L on one torus, kept as a sparse symmetric matrix.

    Rows sum to zero and off-diagonal entries are the edge weights, so -L is
    positive semidefinite with the constants as its kernel.
    """

    def __init__(self, lattice, weights, kind):
        self.lattice = lattice
        self.kind = kind
        weights = np.asarray(weights, dtype=float)
        weights.setflags(write=False)
        self.weights = weights
        n = lattice.n_sites
        rows, cols, data = [], [], []
        sites = np.arange(n)
        for axis in range(lattice.d):
            nb = lattice._fwd[axis]
            w = weights[axis]
            rows.append(sites)
            cols.append(nb)
            data.append(w)
            rows.append(nb)
            cols.append(sites)
            data.append(w)
        diag = np.zeros(n)
        for axis in range(lattice.d):
            diag += weights[axis]
            diag += weights[axis][lattice._bwd[axis]]
        rows.append(sites)
        cols.append(sites)
        data.append(-diag)
        self.matrix = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()
        self.rates = diag
        self.max_rate = float(diag.max())
        self._eig = None

    def eigensystem(self):
        """Full eigendecomposition of -L: ascending eigenvalues, orthonormal columns.

        Eigenvalues below 1e-12 are snapped to exactly 0 so downstream code
        can treat the kernel as a clean atom.
        """
        if self._eig is None:
            n = self.lattice.n_sites
            if n > DENSE_LIMIT:
                raise BackendError(f"dense backend capped at {DENSE_LIMIT} sites, operator has {n}")
            lam, vec = np.linalg.eigh(-self.matrix.toarray())
            lam = np.where(lam < 1e-12, 0.0, lam)
            self._eig = (lam, vec)
        return self._eig

    def apply(self, g):
        return self.matrix @ as_values(g)

    def __repr__(self):
        return f"TorusOperator(kind={self.kind!r}, {self.lattice!r})"


def build_generator(field, kind="conductance"):
    """Generator of the conductance walk, or of the simple walk on its torus."""
    if kind == "conductance":
        return TorusOperator(field.lattice, field.omega, kind)
    if kind == "simple":
        return TorusOperator(field.lattice, np.ones((field.lattice.d, field.lattice.n_sites)), kind)
    raise ParameterError(f"kind must be 'conductance' or 'simple', got {kind!r}")


def simple_generator(lattice):
    """Rate-1 walk generator; needs no field."""
    return TorusOperator(lattice, np.ones((lattice.d, lattice.n_sites)), "simple")


def semigroup_apply(op, g, t, backend="auto"):
    """Apply e^{tL} to g.

    Dense eigendecomposition up to DENSE_LIMIT sites; beyond that the action
    is assembled by uniformization (a Poisson mixture over powers of the
    jump-chain kernel) with Poisson tail mass below 1e-12.  The mean of g is
    preserved either way.
    """
    if t < 0:
        raise ParameterError(f"time must be >= 0, got {t}")
    v = as_values(g)
    if backend == "auto":
        backend = "dense" if op.lattice.n_sites <= DENSE_LIMIT else "uniformization"
    if backend == "dense":
        lam, vec = op.eigensystem()
        out = vec @ (np.exp(-lam * t) * (vec.T @ v))
    elif backend == "uniformization":
        out = _uniformized_apply(op, v, t)
    else:
        raise ParameterError(f"unknown backend {backend!r}")
    return FieldFunction(out, op.lattice)


def _uniformized_apply(op, v, t, tail_mass=1e-12):
    rate = op.max_rate
    s = rate * t
    if s == 0.0:
        return v.copy()
    dist = scipy.stats.poisson(s)
    k_hi = int(dist.isf(tail_mass / 2))
    k_lo = max(0, int(dist.ppf(tail_mass / 2)) - 1)
    pmf = dist.pmf(np.arange(0, k_hi + 1))
    # kernel of the embedded chain: P = I + L/rate, substochastic nowhere
    out = np.zeros_like(v)
    term = v.copy()
    for k in range(0, k_hi + 1):
        if k >= k_lo:
            out += pmf[k] * term
        if k < k_hi:
            term = term + (op.matrix @ term) / rate
    return out


def resolvent_solve(op, g, mu, rtol=1e-10):
    """Solve (mu I - L) u = g by preconditioned conjugate gradients.

    The residual is re-verified by back-substitution after the solve; a
    relative residual above rtol raises instead of returning a bad vector.
    """
    if mu <= 0:
        raise ParameterError(f"resolvent parameter must be > 0, got {mu}")
    v = as_values(g)
    n = op.lattice.n_sites
    norm_g = float(np.linalg.norm(v))
    if norm_g == 0.0:
        return FieldFunction(np.zeros(n), op.lattice)
    a = (sp.identity(n, format="csr") * mu) - op.matrix
    precond = sp.diags(1.0 / (mu + op.rates))
    maxiter = int(50 * math.sqrt(n)) + 1
    x0 = v / (mu + op.rates)
    u, _ = spla.cg(a, v, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=precond)
    residual = float(np.linalg.norm(a @ u - v)) / norm_g
    if residual > rtol:
        raise SolverError(
            f"resolvent solve at mu={mu:g} stopped at relative residual {residual:.3e} "
            f"(target {rtol:g}, cap {maxiter} iterations)"
        )
    return FieldFunction(u, op.lattice)


def dirichlet_form(op, g):
    """Site-averaged energy sum_edges w_e (g(y)-g(x))^2 / n_sites; always >= 0."""
    v = as_values(g)
    lat = op.lattice
    total = 0.0
    for axis in range(lat.d):
        diff = v[lat._fwd[axis]] - v
        total += float(np.dot(op.weights[axis], diff * diff))
    return total / lat.n_sites


def box_spectral_gap(d, n):
    """Smallest nonzero Laplacian eigenvalue of the free-boundary box [-n, n]^d.

    The box graph Laplacian is a Kronecker sum of path Laplacians, so its
    spectrum is all sums of path eigenvalues and the smallest nonzero one is
    the path gap itself, independent of d.  Computed from the explicit path
    matrix rather than the closed form, so tests can pin the latter against
    this as an oracle.
    """
    if d < 1:
        raise ParameterError(f"dimension must be >= 1, got {d}")
    if n < 1:
        raise ParameterError(f"box radius must be >= 1, got {n}")
    m = 2 * n + 1
    path = np.diag(np.concatenate(([1.0], np.full(m - 2, 2.0), [1.0])))
    path -= np.diag(np.ones(m - 1), 1) + np.diag(np.ones(m - 1), -1)
    lam = np.linalg.eigvalsh(path)
    return float(lam[1])


def sobolev_constant(d, n):
    """The per-box constant C_S(n) = 4 / (n^2 lambda_2) used by the box inequality."""
    return 4.0 / (n * n * box_spectral_gap(d, n))


def save_operator_coo(op, path):
    """Write the sparse generator as 'row col value' text lines."""
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write("# condlab-coo v1 generator\n")
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]} {coo.data[i]:.12g}\n")


def save_spectrum_csv(op, path):
    lam, _ = op.eigensystem()
    with open(path, "w") as fh:
        fh.write("# condlab-csv v1 spectrum\n")
        fh.write("index,eigenvalue\n")
        for i, v in enumerate(lam):
            fh.write(f"{i},{v:.12g}\n")
