"""Q1 finite elements on the unit square with homogeneous Dirichlet data.

Node ``(i, j)`` sits at ``x = j*h, y = i*h`` and has global id ``i*(H+1) + j``.
Element-local node order is (lower-left, lower-right, upper-left, upper-right).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import _kernels
from ..errors import ConfigError, ContractError
from .coefficients import CoefficientMap

_GAUSS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


@dataclass(frozen=True)
class Source:
    """Right-hand side descriptor.

    ``constant``: f = value. ``sine``: f = value * 2 pi^2 sin(pi x) sin(pi y),
    whose exact solution for A = 1 is value * sin(pi x) sin(pi y).
    """

    kind: str = "constant"
    value: float = 1.0

    TAGS = {"constant": 0, "sine": 1}

    def __post_init__(self):
        if self.kind not in self.TAGS:
            raise ConfigError(f"unknown source kind {self.kind!r}")

    @property
    def tag(self) -> int:
        return self.TAGS[self.kind]

    @classmethod
    def from_tag(cls, tag: int, value: float) -> "Source":
        for k, t in cls.TAGS.items():
            if t == tag:
                return cls(k, value)
        raise ConfigError(f"unknown source tag {tag}")

    def __call__(self, x, y):
        if self.kind == "constant":
            return np.full(np.broadcast(x, y).shape, self.value)
        return self.value * 2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)


@dataclass
class FemProblem:
    coefficient: CoefficientMap | np.ndarray
    H: int
    source: Source = Source()

    def __post_init__(self):
        if self.H < 2:
            raise ConfigError("grid resolution H must be >= 2")

    @property
    def h(self) -> float:
        return 1.0 / self.H

    @property
    def coefficient_values(self) -> np.ndarray:
        c = self.coefficient
        return c.values if isinstance(c, CoefficientMap) else np.asarray(c, dtype=np.float64)


def _basis_grads(xi, eta):
    # reference gradients of the four bilinear basis functions, shape (4, 2)
    return np.array([
        [-(1 - eta), -(1 - xi)],
        [(1 - eta), -xi],
        [-eta, (1 - xi)],
        [eta, xi],
    ])


def _basis_vals(xi, eta):
    return np.array([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta])


def subcell_stiffness(r: int) -> np.ndarray:
    """(r, r, 4, 4) reference stiffness contributions of each r x r sub-square.

    The Q1 gradient products are quadratic per axis, so 2-point Gauss on each
    sub-square integrates them exactly. In 2-D the element stiffness does not
    depend on h.
    """
    out = np.zeros((r, r, 4, 4))
    for a in range(r):  # along eta (y)
        for b in range(r):  # along xi (x)
            for ge in _GAUSS:
                for gx in _GAUSS:
                    g = _basis_grads((b + gx) / r, (a + ge) / r)
                    out[a, b] += (g @ g.T) / (r * r * 4)
    return out


def _cell_layout(E: int, H: int):
    """Sub-cells per element side, or elements per cell side, for compatible grids."""
    if E % H == 0:
        return E // H, 1
    if H % E == 0:
        return 1, H // E
    raise ConfigError(f"coefficient grid E={E} and mesh H={H} are incompatible: one must divide the other")


def element_coefficients(A: np.ndarray, H: int) -> np.ndarray:
    """(H, H, r, r) coefficient value on every sub-square of every element."""
    E = A.shape[0]
    r, m = _cell_layout(E, H)
    if r > 1:
        return A.reshape(H, r, H, r).transpose(0, 2, 1, 3)
    # element lies inside a single cell: the cell containing its barycentre
    cells = np.arange(H) // m
    return A[np.ix_(cells, cells)][:, :, None, None]


def element_nodes(H: int) -> np.ndarray:
    ei, ej = np.meshgrid(np.arange(H), np.arange(H), indexing="ij")
    ll = (ei * (H + 1) + ej).ravel()
    return np.stack([ll, ll + 1, ll + H + 1, ll + H + 2], axis=1)


def assemble_full(problem: FemProblem):
    """Stiffness matrix and load vector over all (H+1)^2 nodes, before boundary elimination."""
    A = problem.coefficient_values
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError("coefficient must be a square array")
    if (A <= 0).any():
        raise ContractError("coefficient must be strictly positive")
    H = problem.H
    coeffs = element_coefficients(A, H)
    r = coeffs.shape[-1]
    mats = np.einsum("xyab,abij->xyij", coeffs, subcell_stiffness(r)).reshape(H * H, 4, 4)
    nodes = element_nodes(H)
    n = (H + 1) ** 2
    rows, cols, vals = _kernels.q1_coo(mats, nodes)
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    # duplicate summation order may differ between (i, j) and (j, i)
    K = ((K + K.T) * 0.5).tocsr()
    K.sort_indices()

    # load: 2x2 Gauss per element with f sampled at physical points
    h = problem.h
    ei, ej = np.meshgrid(np.arange(H), np.arange(H), indexing="ij")
    ei, ej = ei.ravel(), ej.ravel()
    loc = np.zeros((H * H, 4))
    for ge in _GAUSS:
        for gx in _GAUSS:
            fx = problem.source((ej + gx) * h, (ei + ge) * h)
            loc += fx[:, None] * _basis_vals(gx, ge)[None, :] * (h * h / 4)
    b = np.zeros(n)
    np.add.at(b, nodes.ravel(), loc.ravel())
    return K, b


def interior_mask(H: int) -> np.ndarray:
    m = np.zeros((H + 1, H + 1), dtype=bool)
    m[1:-1, 1:-1] = True
    return m.ravel()


def assemble_stiffness(problem: FemProblem):
    """Interior-node SPD system ``K u = b`` with Dirichlet rows eliminated."""
    K, b = assemble_full(problem)
    inner = np.flatnonzero(interior_mask(problem.H))
    return K[inner][:, inner].tocsr(), b[inner]
