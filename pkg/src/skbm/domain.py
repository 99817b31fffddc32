"""Box domains, their Dirichlet eigenpairs and tensor quadrature grids."""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError


class BoxDomain:
    """The box (0, L_1) x ... x (0, L_d)."""

    def __init__(self, sides=(1.0, 1.0, 1.0)):
        sides = tuple(float(s) for s in np.atleast_1d(sides))
        if not 1 <= len(sides) <= 3:
            raise ValueError("dimension must be 1, 2 or 3")
        if any(not s > 0 for s in sides):
            raise ValueError("all sides must be positive")
        self.sides = sides
        self.d = len(sides)

    @classmethod
    def unit_cube(cls, d=3):
        return cls((1.0,) * d)

    @property
    def volume(self):
        return float(np.prod(self.sides))

    @property
    def center(self):
        return 0.5 * np.asarray(self.sides)

    def __eq__(self, other):
        return isinstance(other, BoxDomain) and self.sides == other.sides

    def __hash__(self):
        return hash(self.sides)

    def __repr__(self):
        return f"BoxDomain(sides={self.sides})"

    def to_dict(self):
        return {"d": self.d, "sides": list(self.sides)}

    @classmethod
    def from_dict(cls, data):
        sides = data["sides"]
        if "d" in data and int(data["d"]) != len(sides):
            raise ValueError("d does not match the number of sides")
        return cls(sides)

    def as_points(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise DomainError(f"points must have trailing dimension {self.d}")
        return x

    def contains(self, x, closed=True):
        x = self.as_points(x)
        L = np.asarray(self.sides)
        if closed:
            return np.all((x >= 0) & (x <= L), axis=-1)
        return np.all((x > 0) & (x < L), axis=-1)


def boundary_distance(domain, x):
    """delta_D(x) = min_i min(x_i, L_i - x_i)."""
    x = domain.as_points(x)
    if not np.all(domain.contains(x)):
        raise DomainError("point outside the closed box")
    L = np.asarray(domain.sides)
    out = np.minimum(x, L - x).min(axis=-1)
    return out if out.ndim else float(out)


def sine_table(L, N, x):
    """sqrt(2/L) sin(n pi x / L) for n = 1..N; shape x.shape + (N,)."""
    n = np.arange(1, N + 1)
    return math.sqrt(2.0 / L) * np.sin(np.multiply.outer(np.asarray(x, float), n) * (math.pi / L))


class EigenBasis:
    """Dirichlet eigenpairs of a box with per-axis cutoff N.

    Modes are stored sorted by eigenvalue, ties broken lexicographically by
    the multi-index.
    """

    def __init__(self, domain, N):
        if N < 1:
            raise ValueError("N must be >= 1")
        self.domain = domain
        self.N = int(N)
        d = domain.d
        idx = np.array(list(itertools.product(range(1, N + 1), repeat=d)), dtype=int)
        lam = (math.pi ** 2) * np.sum((idx / np.asarray(domain.sides)) ** 2, axis=1)
        order = np.lexsort(tuple(idx[:, k] for k in reversed(range(d))) + (lam,))
        self.indices = idx[order]
        self.eigenvalues = lam[order]
        # position of each mode inside the (N,)*d tensor of coefficients
        self.flat_index = np.ravel_multi_index(tuple((self.indices - 1).T), (N,) * d)

    def __len__(self):
        return self.indices.shape[0]

    def __eq__(self, other):
        return isinstance(other, EigenBasis) and self.domain == other.domain and self.N == other.N

    def to_dict(self):
        return {"domain": self.domain.to_dict(), "N": self.N}

    @classmethod
    def from_dict(cls, data):
        return cls(BoxDomain.from_dict(data["domain"]), data["N"])

    def mode_index(self, n):
        """Position of multi-index n in the sorted basis."""
        hits = np.nonzero(np.all(self.indices == np.asarray(n), axis=1))[0]
        if hits.size == 0:
            raise KeyError(f"mode {tuple(n)} not in basis")
        return int(hits[0])

    def eigenvalue(self, n):
        return float((math.pi ** 2) * np.sum((np.asarray(n) / np.asarray(self.domain.sides)) ** 2))

    def evaluate(self, x, modes=None):
        """Eigenfunctions at points x (shape (..., d)) -> (..., n_modes)."""
        x = self.domain.as_points(x)
        idx = self.indices if modes is None else np.atleast_2d(modes)
        out = 1.0
        for k, L in enumerate(self.domain.sides):
            tab = sine_table(L, self.N, x[..., k])
            out = out * tab[..., idx[:, k] - 1]
        return out

    def to_tensor(self, coeffs):
        t = np.zeros((self.N,) * self.domain.d)
        t.flat[self.flat_index] = coeffs
        return t

    def from_tensor(self, tensor):
        return np.asarray(tensor).reshape(-1)[self.flat_index]


def eigen_enumerate(domain, N):
    """List of (eigenvalue, multi-index) sorted ascending."""
    basis = EigenBasis(domain, N)
    return [(float(l), tuple(int(v) for v in n)) for l, n in zip(basis.eigenvalues, basis.indices)]


def weyl_check(domain, j_range):
    """lambda_j * j^(-2/d) over j in j_range (1-based)."""
    j = np.asarray(list(j_range), dtype=int)
    if j.min() < 1:
        raise ValueError("j starts at 1")
    jmax = int(j.max())
    Lmax = max(domain.sides)
    N = max(1, int(math.ceil(jmax ** (1.0 / domain.d))))
    while True:
        lam = EigenBasis(domain, N).eigenvalues
        # every mode outside the cutoff has eigenvalue >= (pi (N+1) / L_max)^2
        if lam.size >= jmax and lam[jmax - 1] < (math.pi * (N + 1) / Lmax) ** 2:
            break
        N += 1
    vals = lam[j - 1] * j ** (-2.0 / domain.d)
    return {"j": j, "ratio": vals, "max_over_min": float(vals.max() / vals.min())}


@dataclass
class Grid:
    """Tensor quadrature grid on a box.

    ``kind="gauss"``: Gauss-Legendre nodes per axis, used for spectral
    expansion.  ``kind="graded"``: midpoint rule in a variable s that maps to
    y = L m(s) with m from ``grading_map``, so nodes cluster at the faces
    like (k/n)^gamma.
    """

    domain: BoxDomain
    n: tuple
    kind: str = "gauss"
    gamma: float = 3.0

    def __post_init__(self):
        n = np.atleast_1d(self.n).astype(int)
        if n.size == 1:
            n = np.repeat(n, self.domain.d)
        self.n = tuple(int(v) for v in n)
        if len(self.n) != self.domain.d or min(self.n) < 1:
            raise ValueError("one positive node count per axis is required")
        if self.kind not in ("gauss", "graded"):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        self.nodes, self.weights, self.s_nodes = [], [], []
        for L, m in zip(self.domain.sides, self.n):
            if self.kind == "gauss":
                x, w = np.polynomial.legendre.leggauss(m)
                self.nodes.append(0.5 * L * (x + 1))
                self.weights.append(0.5 * L * w)
                self.s_nodes.append(0.5 * (x + 1))
            else:
                s = (np.arange(m) + 0.5) / m
                y, dy = grading_map(s, self.gamma)
                self.nodes.append(L * y)
                self.weights.append(L * dy / m)
                self.s_nodes.append(s)

    @property
    def shape(self):
        return self.n

    @property
    def size(self):
        return int(np.prod(self.n))

    def points(self):
        mesh = np.meshgrid(*self.nodes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def weight_tensor(self):
        w = self.weights[0]
        for v in self.weights[1:]:
            w = np.multiply.outer(w, v)
        return w

    def distance(self):
        """delta_D at the grid points, shaped like the grid."""
        d = None
        for k, (L, y) in enumerate(zip(self.domain.sides, self.nodes)):
            dk = np.minimum(y, L - y)
            shape = [1] * self.domain.d
            shape[k] = -1
            dk = dk.reshape(shape)
            d = dk if d is None else np.minimum(d, dk)
        return np.broadcast_to(d, self.n).copy()

    def to_dict(self):
        return {"n": list(self.n), "kind": self.kind, "gamma": self.gamma}


def grading_map(s, gamma):
    """Symmetric grading map of [0,1] onto itself and its derivative.

    m(s) = I_s(gamma, gamma), the regularized incomplete beta function: it
    behaves like s^gamma at both ends and is a polynomial (for integer gamma)
    in between, so grid functions stay smooth in s across the midpoint.
    """
    s = np.asarray(s, dtype=float)
    y = special.betainc(gamma, gamma, s)
    dy = (s * (1 - s)) ** (gamma - 1) / special.beta(gamma, gamma)
    return y, dy


def grading_inverse(y, gamma):
    return special.betaincinv(gamma, gamma, np.asarray(y, dtype=float))
