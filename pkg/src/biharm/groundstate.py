"""Constrained minimization on the unit-mass sphere by projected gradient descent."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .energy import (EnergyBreakdown, chemical_potential, constrained_gradient,
                     energy)
from .field import (Field, dilate, h2_weight_apply, l2_norm_sq, read_snapshot,
                    renormalize_mass, translate)
from .grid import Grid, quadrature
from .potentials import classify, sample

_ARMIJO = 1e-4


class SolveStatus(enum.Enum):
    CONVERGED = "Converged"
    DIVERGED_BELOW_FLOOR = "DivergedBelowFloor"
    MAX_ITERS = "MaxIters"


@dataclass(frozen=True)
class InitSpec:
    """Initializer for the descent.

    kind is one of "gaussian" (unit-mass bump of the given width at the
    potential minimum; the default), "constant", "file" (load a snapshot from
    path), or "dilated_Q" (compress a reference profile by ell and park it at
    the potential minimum -- the warm start the concentration sweep uses).
    """

    kind: str = "gaussian"
    width: float = 1.0
    path: str = ""
    ell: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "constant", "file", "dilated_Q"):
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.width <= 0 or self.ell <= 0:
            raise ValueError("init width and ell must be positive")
        if self.kind == "file" and not self.path:
            raise ValueError("file init needs a path")


@dataclass(frozen=True)
class SolveConfig:
    step0: float = 1.0
    shrink: float = 0.5
    grow: float = 1.3
    tol_grad: float = 1e-6
    max_iters: int = 2000
    energy_floor: float = -1e3
    init: InitSpec = InitSpec()
    precondition: bool = False

    def __post_init__(self):
        if self.step0 <= 0:
            raise ValueError("step0 must be positive")
        if not (0.0 < self.shrink < 1.0 < self.grow):
            raise ValueError("line-search factors need 0 < shrink < 1 < grow")
        if self.tol_grad <= 0:
            raise ValueError("tol_grad must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.energy_floor >= 0:
            raise ValueError("energy_floor must be negative")


@dataclass
class SolveResult:
    minimizer: Field
    breakdown: EnergyBreakdown
    mu: float
    grad_residual: float
    iterations: int
    status: SolveStatus
    history: tuple  # rows (iter, energy, grad_residual, step_size)
    init_label: str


def potential_argmin(V, g: Grid) -> np.ndarray:
    """Coordinates of the smallest sampled potential value (origin on ties)."""
    vals = sample(V, g).values
    if np.ptp(vals) == 0.0:
        return np.zeros(g.d)
    idx = np.unravel_index(int(np.argmin(vals)), g.shape)
    return np.array([g.axes[ax][i] for ax, i in enumerate(idx)])


def initial_field(g: Grid, V, spec: InitSpec, profile: Field | None = None) -> Field:
    """Build the unit-mass starting state described by spec."""
    if spec.kind == "gaussian":
        center = potential_argmin(V, g)
        r2 = sum((m - c) ** 2 for m, c in zip(g.meshes(), center))
        return renormalize_mass(Field(g, np.exp(-r2 / (2.0 * spec.width**2))))
    if spec.kind == "constant":
        return renormalize_mass(Field(g, np.ones(g.shape)))
    if spec.kind == "file":
        return renormalize_mass(read_snapshot(spec.path, g))
    # dilated_Q
    if profile is None:
        raise ValueError("dilated_Q initialization needs a reference profile")
    v = dilate(profile, spec.ell)
    center = potential_argmin(V, g)
    if np.any(center != 0.0):
        v = translate(v, center)
    return renormalize_mass(v)


def _inner(g: Grid, u: Field, v: Field) -> float:
    return quadrature(g, u.values * v.values)


def solve(g: Grid, V, a: float, cfg: SolveConfig = SolveConfig(),
          profile: Field | None = None, *, start: Field | None = None) -> SolveResult:
    """Minimize the energy at coupling a over unit-mass states on g.

    Iterates u <- renormalize(u - step * D) where D is the projected gradient
    (optionally rescaled by (1 + |k|^4)^{-1} when cfg.precondition is set, for
    stiff high-resolution runs), with Armijo backtracking so the energy is
    non-increasing across accepted steps (up to roundoff of the energy
    evaluation itself, without which the line search thrashes once the
    achievable decrease drops below machine noise).  Mass is renormalized
    exactly after every step.  Termination is data, not an exception: Converged when the
    projected-gradient L2 norm falls below cfg.tol_grad, DivergedBelowFloor
    when the energy passes cfg.energy_floor (the finite witness for the
    unbounded-below regime), MaxIters otherwise.

    start, when given, overrides cfg.init: descent begins from the mass
    renormalization of that field (sweeps warm-start successive couplings
    from the previous minimizer this way).
    """
    if a < 0:
        raise ValueError("coupling must be nonnegative")
    if classify(V, g.d) == "neither":
        raise ValueError("potential is neither confining nor a relatively bounded well")

    if start is not None:
        if start.grid is not g and (start.grid.d, start.grid.n, start.grid.half_width) != (g.d, g.n, g.half_width):
            raise ValueError("warm-start field lives on a different grid")
        u = renormalize_mass(start)
    else:
        u = initial_field(g, V, cfg.init, profile)
    bd = energy(u, V, a)
    grad = constrained_gradient(u, V, a)
    res = float(np.sqrt(l2_norm_sq(grad)))
    history = [(0, bd.total, res, 0.0)]

    status = None
    if bd.total < cfg.energy_floor:
        status = SolveStatus.DIVERGED_BELOW_FLOOR
    elif res <= cfg.tol_grad:
        status = SolveStatus.CONVERGED

    step = cfg.step0
    it = 0
    retried_after_stall = False
    while status is None and it < cfg.max_iters:
        it += 1
        direction = h2_weight_apply(grad, power=-1.0) if cfg.precondition else grad
        slope = _inner(g, grad, direction)  # >= 0; zero only at stationarity
        slack = 1e-14 * (1.0 + abs(bd.total))
        accepted = False
        while step > 1e-18 * cfg.step0:
            trial = renormalize_mass(u - direction * step)
            tb = energy(trial, V, a)
            new_grad = None
            need = _ARMIJO * step * slope
            if need > slack:
                if tb.total <= bd.total - need:
                    accepted = True
                    break
            elif tb.total <= bd.total + slack:
                # the resolvable decrease is below energy roundoff, so gate on
                # the residual instead: otherwise marginally unstable steps
                # oscillate inside the roundoff shell and never settle
                new_grad = constrained_gradient(trial, V, a)
                if np.sqrt(l2_norm_sq(new_grad)) <= res * (1.0 + 1e-9):
                    accepted = True
                    break
            step *= cfg.shrink
        if not accepted:
            # Line search hit roundoff without sufficient decrease.  Near the
            # tolerance this is usually a lattice artifact — backtracking only
            # visits step sizes step0*grow^j*shrink^m, and in the roundoff
            # shell acceptance depends on which exact trial points that set
            # hits — so retry once from a fresh step0 lattice (with the mass
            # renormalized, which redistributes last-ulp noise the same way a
            # warm restart would) before giving up.
            if not retried_after_stall:
                retried_after_stall = True
                u = renormalize_mass(u)
                bd = energy(u, V, a)
                grad = constrained_gradient(u, V, a)
                res = float(np.sqrt(l2_norm_sq(grad)))
                step = cfg.step0
                continue
            status = SolveStatus.MAX_ITERS
            break
        u, bd = trial, tb
        grad = new_grad if new_grad is not None else constrained_gradient(u, V, a)
        res = float(np.sqrt(l2_norm_sq(grad)))
        history.append((it, bd.total, res, step))
        step *= cfg.grow
        if bd.total < cfg.energy_floor:
            status = SolveStatus.DIVERGED_BELOW_FLOOR
        elif res <= cfg.tol_grad:
            status = SolveStatus.CONVERGED
    if status is None:
        status = SolveStatus.MAX_ITERS

    return SolveResult(minimizer=u, breakdown=bd,
                       mu=chemical_potential(u, V, a),
                       grad_residual=res, iterations=it, status=status,
                       history=tuple(history),
                       init_label="warm" if start is not None else cfg.init.kind)


def write_iteration_log(result: SolveResult, path) -> None:
    """Dump the iteration history as CSV: iter, energy, grad_residual, step_size."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "energy", "grad_residual", "step_size"])
        for it, total, res, step in result.history:
            writer.writerow([it, f"{total:.17g}", f"{res:.17g}", f"{step:.17g}"])


def trial_upper_bound(g: Grid, V, a: float, eps: float, profile: Field,
                      x0=None) -> float:
    """Energy of the concentrating trial state; an upper bound for the infimum.

    The reference profile is cut off smoothly at radius eps**(-1/6) (quintic
    ramp over the outer 40% of that radius), renormalized, compressed by
    ell = eps**(-1/5), and centered at x0 (potential minimum when omitted).
    Raises when the cutoff radius does not fit in the box, which signals the
    box is too small for this eps.
    """
    if eps <= 0:
        raise ValueError("profile parameter eps must be positive")
    radius = eps ** (-1.0 / 6.0)
    if radius >= g.half_width:
        raise ValueError(
            f"cutoff radius {radius:.4g} exceeds the box half-width {g.half_width}; "
            "enlarge the box or increase eps")
    r = np.sqrt(sum(m**2 for m in g.meshes()))
    t = np.clip((r - 0.6 * radius) / (0.4 * radius), 0.0, 1.0)
    ramp = 1.0 - t**3 * (t * (6.0 * t - 15.0) + 10.0)
    w = renormalize_mass(Field(g, profile.values * ramp))
    v = dilate(w, eps ** (-1.0 / 5.0))
    if x0 is None:
        x0 = potential_argmin(V, g)
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if np.any(x0 != 0.0):
        v = translate(v, x0)
    return energy(renormalize_mass(v), V, a).total
