"""Interacting particle simulation, nonlinear Fokker-Planck flows and the
pathwise noise-to-trajectory transformation.

The Fokker-Planck stepper uses an implicit exponentially-fitted flux
(Scharfetter-Gummel): it is positivity preserving, conserves mass exactly in
flux form, and its stationary state coincides with the discrete Gibbs density
of the drift, so equilibria stay put to solver roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import CFLViolation, NoConvergence, TooLarge
from .grids import Density, MarginalFlow, TimeGrid
from .potentials import InteractionPotential, conv_force

_DIFFUSIVITY = 0.5  # unit Brownian noise: d mu = (1/2) mu'' + ...


@dataclass
class PathEnsemble:
    """Discrete-time particle trajectories with their driving noise increments."""

    time_grid: TimeGrid
    positions: np.ndarray   # (n_particles, n_steps + 1)
    increments: np.ndarray  # (n_particles, n_steps)
    seed: int

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.increments = np.asarray(self.increments, dtype=float)
        n, k = self.positions.shape[0], self.time_grid.n_steps
        if self.positions.shape != (n, k + 1) or self.increments.shape != (n, k):
            raise ValueError("ensemble arrays inconsistent with the time grid")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("particle positions must be finite")

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]


def interaction_drift(pot: InteractionPotential, x: np.ndarray,
                      chunk: int = 512) -> np.ndarray:
    """Empirical drift -(1/N) sum_j W'(x_i - x_j) for every particle."""
    x = np.asarray(x, dtype=float)
    if pot.kind == "zero":
        return np.zeros_like(x)
    if pot.kind == "quadratic":
        # The pairwise sum telescopes exactly for a quadratic kernel.
        return -pot.kappa * (x - x.mean())
    out = np.empty_like(x)
    for lo in range(0, x.size, chunk):
        hi = min(lo + chunk, x.size)
        out[lo:hi] = -pot.dw(x[lo:hi, None] - x[None, :]).mean(axis=1)
    return out


def _particle_streams(seed: int, n_particles: int):
    """Counter-based per-particle generators; bitwise stable under any scheduling."""
    seed = int(seed) & (2**64 - 1)
    return [
        np.random.Generator(np.random.Philox(key=np.array([seed, i], dtype=np.uint64)))
        for i in range(n_particles)
    ]


def simulate_particles(pot: InteractionPotential, mu_in: Density,
                       time_grid: TimeGrid, n_particles: int, seed: int, *,
                       init: str = "stratified") -> PathEnsemble:
    """Euler-Maruyama simulation of the interacting particle system.

    Initial positions are drawn from mu_in by inverse CDF, either at the
    stratified quantiles (i + 1/2)/N (default, variance reduction for marginal
    comparisons) or iid.  Deterministic given the seed.
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    if init not in ("stratified", "iid"):
        raise ValueError(f"unknown init mode {init!r}")
    k_steps, dt = time_grid.n_steps, time_grid.dt
    streams = _particle_streams(seed, n_particles)

    cdf = mu_in.cdf_at_edges()
    edges = mu_in.grid.edges
    if init == "stratified":
        quantiles = (np.arange(n_particles) + 0.5) / n_particles
    else:
        quantiles = np.array([g.uniform() for g in streams])
    x0 = np.interp(quantiles, cdf / cdf[-1], edges)

    increments = np.stack([
        g.normal(0.0, np.sqrt(dt), size=k_steps) for g in streams
    ])

    positions = np.empty((n_particles, k_steps + 1))
    positions[:, 0] = x0
    for k in range(k_steps):
        drift = interaction_drift(pot, positions[:, k])
        positions[:, k + 1] = positions[:, k] + drift * dt + increments[:, k]
    return PathEnsemble(time_grid, positions, increments, int(seed))


def noise_ensemble(ensemble: PathEnsemble) -> PathEnsemble:
    """Driving noise paths started at the initial positions: omega_t = X_0 + B_t."""
    cum = np.cumsum(ensemble.increments, axis=1)
    positions = np.concatenate([
        ensemble.positions[:, :1],
        ensemble.positions[:, :1] + cum,
    ], axis=1)
    return PathEnsemble(ensemble.time_grid, positions,
                        ensemble.increments.copy(), ensemble.seed)


def tanaka_theta(pot: InteractionPotential, ensemble: PathEnsemble, *,
                 tol: float = 1e-10, max_iters: int = 200) -> PathEnsemble:
    """Map noise paths to interacting trajectories by fixed-point iteration.

    Iterates Y <- omega + int_0^t (ensemble-average drift of Y) ds with
    left-endpoint quadrature, matching the Euler-Maruyama stepping, until the
    sup change over all paths and nodes falls below tol.
    """
    if ensemble.n_particles > 10_000:
        raise TooLarge("ensemble exceeds the 10^4 particle guard")
    omega = ensemble.positions
    dt = ensemble.time_grid.dt
    k_steps = ensemble.time_grid.n_steps
    y = np.repeat(omega[:, :1], k_steps + 1, axis=1)
    for _ in range(max_iters):
        drift = np.empty((ensemble.n_particles, k_steps))
        for k in range(k_steps):
            drift[:, k] = interaction_drift(pot, y[:, k])
        y_next = omega.copy()
        y_next[:, 1:] += dt * np.cumsum(drift, axis=1)
        delta = float(np.max(np.abs(y_next - y)))
        y = y_next
        if delta <= tol:
            break
    else:
        raise NoConvergence(
            f"theta iteration stalled at {delta:.3e}; "
            "the drift may violate its Lipschitz bound"
        )
    return PathEnsemble(ensemble.time_grid, y, ensemble.increments.copy(),
                        ensemble.seed)


def _bernoulli(w: np.ndarray) -> np.ndarray:
    """B(w) = w / (e^w - 1), the exponential-fitting flux weight."""
    out = np.ones_like(w)
    nz = np.abs(w) > 1e-12
    with np.errstate(over="ignore"):
        den = np.expm1(w[nz])
    out[nz] = np.where(np.isinf(den), 0.0, w[nz] / den)
    return out


def _fp_step(p: np.ndarray, b_cells: np.ndarray, dx: float, dt: float) -> np.ndarray:
    """One implicit Fokker-Planck step with no-flux boundaries."""
    b_edges = 0.5 * (b_cells[:-1] + b_cells[1:])
    w = b_edges * dx / _DIFFUSIVITY
    bm = _bernoulli(-w)  # weight of the left cell in the edge flux
    bp = _bernoulli(w)   # weight of the right cell
    c = _DIFFUSIVITY * dt / dx**2
    n = p.size
    diag = np.ones(n)
    diag[:-1] += c * bm
    diag[1:] += c * bp
    ab = np.zeros((3, n))
    ab[1] = diag
    ab[0, 1:] = -c * bp   # superdiagonal
    ab[2, :-1] = -c * bm  # subdiagonal
    out = solve_banded((1, 1), ab, p)
    return np.maximum(out, 0.0)


def _check_drift_resolution(b: np.ndarray, dx: float, dt: float, limit: float):
    ratio = float(np.max(np.abs(b)) * dt / dx)
    if ratio > limit:
        raise CFLViolation(
            f"drift moves {ratio:.1f} cells per step (limit {limit}); "
            "the time grid under-resolves the advection"
        )


def mkv_flow(pot: InteractionPotential, mu_in: Density, time_grid: TimeGrid, *,
             drift_resolution_limit: float = 8.0,
             boundary_mass_tol: float = 1e-8) -> MarginalFlow:
    """Marginal flow of the McKean-Vlasov diffusion, self-consistent drift."""
    if mu_in.boundary_mass() > boundary_mass_tol:
        raise ValueError(
            f"initial density carries {mu_in.boundary_mass():.2e} boundary mass; "
            "enlarge the domain"
        )
    grid, dx, dt = mu_in.grid, mu_in.grid.dx, time_grid.dt
    values = np.empty((time_grid.n_steps + 1, grid.n_cells))
    values[0] = mu_in.values
    for k in range(time_grid.n_steps):
        b = -conv_force(pot, Density(grid, values[k]))
        _check_drift_resolution(b, dx, dt, drift_resolution_limit)
        values[k + 1] = _fp_step(values[k], b, dx, dt)
    return MarginalFlow(time_grid, grid, values)


def reference_flow(pot: InteractionPotential, frozen: MarginalFlow,
                   mu_start: Density, *,
                   drift_resolution_limit: float = 8.0,
                   boundary_mass_tol: float = 1e-8) -> MarginalFlow:
    """Linear Fokker-Planck flow whose drift is induced by a frozen flow.

    Feeding a flow its own output with the same start reproduces mkv_flow
    bitwise, step by step.
    """
    if mu_start.grid != frozen.grid:
        raise ValueError("start density and frozen flow live on different grids")
    if mu_start.boundary_mass() > boundary_mass_tol:
        raise ValueError("start density carries too much boundary mass")
    grid, dx, dt = frozen.grid, frozen.grid.dx, frozen.time_grid.dt
    values = np.empty_like(frozen.values)
    values[0] = mu_start.values
    for k in range(frozen.time_grid.n_steps):
        b = -conv_force(pot, frozen.density(k))
        _check_drift_resolution(b, dx, dt, drift_resolution_limit)
        values[k + 1] = _fp_step(values[k], b, dx, dt)
    return MarginalFlow(frozen.time_grid, grid, values)
