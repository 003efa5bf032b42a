"""Symmetric pair interaction potentials and their action on densities.

The library covers three kernels: ``zero`` (free diffusion), ``quadratic``
kappa*z^2/2 (uniformly convex, closed-form oracles) and ``gaussian-well``
a*(1 - exp(-z^2/2s^2)) (bounded Hessian, not convex).  Convolutions against
densities are direct double sums; at the grid sizes used here that is cheap
and avoids periodic wrap-around artifacts on the truncated domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import Density, SpatialGrid


@dataclass(frozen=True)
class InteractionPotential:
    """Pair potential W with derivatives and curvature bounds.

    kappa is a certified convexity lower bound of W'' (zero when no positive
    bound holds); hess_sup is an upper bound of W''.  Both have units 1/time^2.
    """

    kind: str
    kappa: float
    hess_sup: float
    params: tuple = field(default=())

    @classmethod
    def zero(cls) -> "InteractionPotential":
        return cls("zero", 0.0, 0.0)

    @classmethod
    def quadratic(cls, kappa: float) -> "InteractionPotential":
        if kappa <= 0:
            raise ValueError("quadratic potential needs kappa > 0")
        return cls("quadratic", float(kappa), float(kappa))

    @classmethod
    def gaussian_well(cls, amplitude: float, width: float) -> "InteractionPotential":
        if amplitude <= 0 or width <= 0:
            raise ValueError("gaussian-well needs positive amplitude and width")
        # W''(0) = a/s^2 is the Hessian peak; no positive convexity bound exists.
        return cls("gaussian-well", 0.0, float(amplitude) / float(width) ** 2,
                   (float(amplitude), float(width)))

    @classmethod
    def from_spec(cls, spec: dict) -> "InteractionPotential":
        kind = spec.get("kind")
        if kind == "zero":
            return cls.zero()
        if kind == "quadratic":
            return cls.quadratic(float(spec["kappa"]))
        if kind == "gaussian-well":
            return cls.gaussian_well(float(spec["amplitude"]), float(spec["width"]))
        raise ValueError(f"unknown potential kind: {kind!r}")

    def to_spec(self) -> dict:
        if self.kind == "quadratic":
            return {"kind": "quadratic", "kappa": self.kappa}
        if self.kind == "gaussian-well":
            a, s = self.params
            return {"kind": "gaussian-well", "amplitude": a, "width": s}
        return {"kind": "zero"}

    def w(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(z)
        if self.kind == "quadratic":
            return 0.5 * self.kappa * z**2
        a, s = self.params
        return a * (1.0 - np.exp(-(z**2) / (2.0 * s**2)))

    def dw(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(z)
        if self.kind == "quadratic":
            return self.kappa * z
        a, s = self.params
        return (a / s**2) * z * np.exp(-(z**2) / (2.0 * s**2))

    def d2w(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(z)
        if self.kind == "quadratic":
            return np.full_like(z, self.kappa)
        a, s = self.params
        u = (z / s) ** 2
        return (a / s**2) * (1.0 - u) * np.exp(-0.5 * u)


class PotentialTables:
    """Pairwise kernel matrices of a potential on a fixed grid, built lazily."""

    def __init__(self, pot: InteractionPotential, grid: SpatialGrid):
        self.pot = pot
        self.grid = grid
        self._diff = None
        self._w = None
        self._dw = None
        self._d2w = None

    @property
    def diff(self) -> np.ndarray:
        if self._diff is None:
            x = self.grid.centers
            self._diff = x[:, None] - x[None, :]
        return self._diff

    @property
    def w_matrix(self) -> np.ndarray:
        if self._w is None:
            self._w = self.pot.w(self.diff)
        return self._w

    @property
    def dw_matrix(self) -> np.ndarray:
        if self._dw is None:
            self._dw = self.pot.dw(self.diff)
        return self._dw

    @property
    def d2w_matrix(self) -> np.ndarray:
        if self._d2w is None:
            self._d2w = self.pot.d2w(self.diff)
        return self._d2w


def conv_force(pot: InteractionPotential, mu: Density,
               tables: PotentialTables | None = None) -> np.ndarray:
    """Interaction force W' * mu at the cell centers."""
    if pot.kind == "zero":
        return np.zeros(mu.grid.n_cells)
    if pot.kind == "quadratic":
        # Exactly affine: the double sum telescopes to kappa * (x - mean).
        return pot.kappa * (mu.grid.centers - mu.mean())
    tables = tables or PotentialTables(pot, mu.grid)
    return tables.dw_matrix @ (mu.values * mu.grid.dx)


def convolved_potential(pot: InteractionPotential, mu: Density,
                        tables: PotentialTables | None = None) -> np.ndarray:
    """Values of W * mu at the cell centers."""
    if pot.kind == "zero":
        return np.zeros(mu.grid.n_cells)
    tables = tables or PotentialTables(pot, mu.grid)
    return tables.w_matrix @ (mu.values * mu.grid.dx)


def interaction_energy(pot: InteractionPotential, mu: Density,
                       tables: PotentialTables | None = None) -> float:
    """Double integral of W(x - y) against mu x mu."""
    if pot.kind == "zero":
        return 0.0
    conv = convolved_potential(pot, mu, tables)
    return float(np.sum(conv * mu.values) * mu.grid.dx)


def hessian_kernel_term(pot: InteractionPotential, mu: Density, psi: np.ndarray,
                        tables: PotentialTables | None = None) -> np.ndarray:
    """x -> integral of W''(x - y) (psi(x) - psi(y)) mu(dy).

    For quadratic W this is exactly kappa * (psi - mean of psi under mu).
    """
    psi = np.asarray(psi, dtype=float)
    weights = mu.values * mu.grid.dx
    if pot.kind == "zero":
        return np.zeros_like(psi)
    if pot.kind == "quadratic":
        return pot.kappa * (psi - np.sum(psi * weights))
    tables = tables or PotentialTables(pot, mu.grid)
    k = tables.d2w_matrix
    return psi * (k @ weights) - k @ (psi * weights)
