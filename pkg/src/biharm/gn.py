"""Optimal interpolation constant and its minimizing profile via quotient descent."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize

from .energy import critical_power, el_residual, gn_quotient
from .field import (Field, bilap_apply, bilap_energy, dilate, h2_weight_apply,
                    l2_norm_sq, lq_integral, read_snapshot, recenter,
                    renormalize_mass, write_snapshot)
from .grid import Grid, make_grid, quadrature
from .groundstate import SolveConfig

_ARMIJO = 1e-4


@dataclass
class GNResult:
    a_star: float
    Q: Field
    nonlinear_check: float  # a_star * integral |Q|^q; 1 in the sharp normalization
    el_constants: tuple
    resolutions: tuple  # ((n, a_star_at_n), ...) coarse-to-fine cross-check
    quotient_residual: float


def _quotient_and_parts(u: Field, q: int):
    kin = bilap_energy(u)
    mass = l2_norm_sq(u)
    non = lq_integral(u, q)
    if non <= 0.0:
        raise ValueError("quotient undefined for a field with no nonlinear mass")
    s = 0.5 * (q - 2.0)
    return kin * mass**s / non, kin, mass, non


def _quotient_gradient(u: Field, q: int, kin, mass, non) -> Field:
    g = u.grid
    s = 0.5 * (q - 2.0)
    vals = ((2.0 * mass**s / non) * bilap_apply(u).values
            + (2.0 * s * kin * mass ** (s - 1.0) / non) * u.values
            - (q * kin * mass**s / non**2)
            * np.abs(u.values) ** (q - 2.0) * u.values)
    grad = Field(g, vals)
    # scale invariance makes <grad, u> = 0 analytically; enforce it exactly
    coef = quadrature(g, grad.values * u.values) / l2_norm_sq(u)
    return Field(g, grad.values - coef * u.values)


@dataclass
class _Run:
    u: Field
    value: float
    residual: float
    iterations: int
    converged: bool


def _regauge(u: Field, q: int) -> tuple[Field, float]:
    """Dilate to the slice kin == mass (and unit mass); returns the factor used.

    The quotient is exactly dilation- and amplitude-invariant, so descent can
    wander along those flat directions toward states only a few nodes wide,
    where grid aliasing pins a spurious stationary point.  Pulling the iterate
    back to the canonical gauge keeps it resolved without touching its shape.
    """
    _, kin, mass, _ = _quotient_and_parts(u, q)
    ell = (mass / kin) ** 0.25
    if abs(ell - 1.0) < 1e-9:
        return renormalize_mass(u), ell
    return renormalize_mass(dilate(u, ell)), ell


def _lbfgs_stage(g: Grid, u0: Field, cfg: SolveConfig) -> Field:
    q = critical_power(g.d)
    weight = g.dx**g.d
    u0 = renormalize_mass(u0)
    val0, _, _, _ = _quotient_and_parts(u0, q)
    # Gauge-fixing penalty: zero, with zero gradient, on the slice kin == mass,
    # so stationary points there are untouched; away from it the penalty gives
    # the two exact invariances (dilation, amplitude) real curvature and walls
    # off both degenerate escapes, narrow (aliasing-pinned spikes) and wide
    # (flattening toward the zero-curvature constant).
    w = 4.0 * val0

    def fun(x):
        v = Field(g, x.reshape(g.shape).copy())
        val, kin, mass, non = _quotient_and_parts(v, q)
        grad = _quotient_gradient(v, q, kin, mass, non)
        gauge = np.log(kin / mass)
        gvals = grad.values + (4.0 * w * gauge) * (
            bilap_apply(v).values / kin - v.values / mass)
        return val + w * gauge * gauge, gvals.ravel() * weight

    out = optimize.minimize(
        fun, u0.values.ravel(), jac=True, method="L-BFGS-B",
        options=dict(maxiter=max(cfg.max_iters, 4000), maxfun=60000,
                     ftol=1e-22, gtol=1e-16, maxcor=30))
    return renormalize_mass(Field(g, out.x.reshape(g.shape).copy()))


def _polish_stage(g: Grid, u0: Field, cfg: SolveConfig, budget: int) -> _Run:
    q = critical_power(g.d)
    u = u0
    val, kin, mass, non = _quotient_and_parts(u, q)
    grad = _quotient_gradient(u, q, kin, mass, non)
    res = float(np.sqrt(l2_norm_sq(grad)))
    step = cfg.step0
    it = 0
    while it < budget and res > cfg.tol_grad:
        it += 1
        direction = h2_weight_apply(grad, power=-1.0) if cfg.precondition else grad
        slope = quadrature(g, grad.values * direction.values)
        slack = 1e-14 * (1.0 + abs(val))
        accepted = False
        while step > 1e-18 * cfg.step0:
            trial = renormalize_mass(u - direction * step)
            tval, tkin, tmass, tnon = _quotient_and_parts(trial, q)
            new_grad = None
            need = _ARMIJO * step * slope
            if need > slack:
                if tval <= val - need:
                    accepted = True
                    break
            elif tval <= val + slack:
                new_grad = _quotient_gradient(trial, q, tkin, tmass, tnon)
                if np.sqrt(l2_norm_sq(new_grad)) <= res * (1.0 + 1e-9):
                    accepted = True
                    break
            step *= cfg.shrink
        if not accepted:
            break
        u, val, kin, mass, non = trial, tval, tkin, tmass, tnon
        grad = (new_grad if new_grad is not None
                else _quotient_gradient(u, q, kin, mass, non))
        res = float(np.sqrt(l2_norm_sq(grad)))
        step *= cfg.grow
    return _Run(u, val, res, it, res <= cfg.tol_grad)


def _descend_quotient(g: Grid, u0: Field, cfg: SolveConfig) -> _Run:
    """Alternate L-BFGS transport with roundoff-gated polishing rounds.

    L-BFGS (analytic gradient, quadrature-weighted) drops the quotient to its
    value-resolution floor quickly but leaves the raw gradient norm orders of
    magnitude above cfg.tol_grad; the backtracking polish — the same
    roundoff-aware line search as the constrained energy solver — grinds the
    residual the rest of the way.  Either stage can stall (the polish when
    every trial step raises the residual, L-BFGS when its curvature model goes
    stale), so the pair is repeated until the residual converges or stops
    making headway.

    Not every initial state lies in the basin of the localized minimizer: on a
    periodic box the quotient degenerates along flattening profiles (a
    constant has zero fourth-order energy but positive q-norm), so overly wide
    initials drift toward that valley forever, lowering the quotient slightly
    below the localized minimum without ever becoming stationary.  Such runs
    end here with converged=False and are discarded by the caller.
    """
    q = critical_power(g.d)
    u = renormalize_mass(u0)
    budget = max(500, cfg.max_iters // 4)
    total = 0
    prev_res = np.inf
    for _ in range(6):
        u, _ = _regauge(recenter(_lbfgs_stage(g, u, cfg))[0], q)
        run = _polish_stage(g, u, cfg, budget)
        total += run.iterations
        u, ell = _regauge(recenter(run.u)[0], q)
        settled = abs(ell - 1.0) < 1e-6
        if run.converged and settled:
            break
        if not run.converged and settled and run.residual > 0.5 * prev_res:
            break  # stalled in place with the gauge already canonical
        prev_res = run.residual
    val, kin, mass, non = _quotient_and_parts(u, q)
    grad = _quotient_gradient(u, q, kin, mass, non)
    res = float(np.sqrt(l2_norm_sq(grad)))
    return _Run(u, val, res, total, res <= cfg.tol_grad)


def _mirror(vals: np.ndarray, ax: int) -> np.ndarray:
    # node j -> node (n - j) mod n realizes x -> -x on nodes starting at -L
    return np.roll(np.flip(vals, axis=ax), 1, axis=ax)


def symmetrize_even(u: Field) -> Field:
    """Recenter and average over the box isometries fixing the origin."""
    v, _ = recenter(u)
    group = [v.values, _mirror(v.values, 0)]
    if u.grid.d == 2:
        group += [_mirror(b, 1) for b in group]
        group += [b.T.copy() for b in group]
    return renormalize_mass(Field(u.grid, np.mean(group, axis=0)))


def _gaussian_state(g: Grid, width: float, center) -> Field:
    r2 = sum((m - c) ** 2 for m, c in zip(g.meshes(), center))
    return renormalize_mass(Field(g, np.exp(-r2 / (2.0 * width**2))))


def _finalize(u: Field) -> Field:
    v, _ = recenter(u)
    peak = v.values.flat[int(np.argmax(np.abs(v.values)))]
    if peak < 0:
        v = v * -1.0
    return normalize_gn(v)


def compute_gn(g: Grid, cfg: SolveConfig | None = None, restarts: int = 4,
               seed: int = 0, threads: int = 1, coarse_check: bool = True,
               center=None) -> GNResult:
    """Minimize the quotient over the grid and return the sharp constant.

    Runs several descents from gaussian initials of different widths (noisy
    perturbations past the first few), keeps the smallest quotient among the
    *converged* runs — non-stationary drifts toward the box's degenerate flat
    valley are discarded, see _descend_quotient — applies even symmetrization
    and a polishing descent, then normalizes the profile to unit mass and unit
    fourth-order seminorm.  The constant is the quotient of the stored
    profile, so the sharp-normalization identity a_star * lq_integral(Q, q) = 1
    closes by construction; what is *not* automatic — and is checked by the
    test batteries — is that no other localized state beats it.
    """
    if cfg is None:
        cfg = SolveConfig(tol_grad=3e-7, max_iters=8000, precondition=True)
    if restarts < 1:
        raise ValueError("need at least one restart")
    q = critical_power(g.d)
    center = np.zeros(g.d) if center is None else np.asarray(center, dtype=np.float64)
    rng = np.random.default_rng(seed)
    base = cfg.init.width if cfg.init.kind == "gaussian" else 1.0
    widths = (1.0, 0.7, 1.5, 2.2, 0.5, 1.1)
    initials = []
    for i in range(restarts):
        u0 = _gaussian_state(g, base * widths[i % len(widths)], center)
        if i >= len(widths):
            bump = rng.standard_normal(g.shape)
            bump = Field(g, g.inverse(g.forward(bump) * np.exp(-g.k_sq)).real)
            u0 = renormalize_mass(u0 + bump * (0.05 / np.sqrt(l2_norm_sq(bump))))
        initials.append(u0)

    def run(u0: Field) -> _Run:
        try:
            return _descend_quotient(g, u0, cfg)
        except ValueError:
            # collapsed to zero along the way; report as a failed restart
            return _Run(u0, np.inf, np.inf, 0, False)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(run, initials))
    else:
        runs = [run(u0) for u0 in initials]
    converged_runs = [r for r in runs if r.converged]
    if converged_runs:
        best = min(converged_runs, key=lambda r: r.value)
    else:
        # seed the final polish with the nearest-to-stationary run; selecting
        # by value here would favor degenerate drifts (see _descend_quotient)
        best = min(runs, key=lambda r: r.residual)

    polished = _descend_quotient(g, symmetrize_even(best.u), cfg)
    if polished.converged and (not best.converged
                               or polished.value <= best.value + 1e-9):
        best = polished
    if not best.converged:
        raise RuntimeError(
            f"no quotient descent converged; smallest residual "
            f"{best.residual:.3e} above tol_grad {cfg.tol_grad:.3e}")

    Q = _finalize(best.u)
    a_star = gn_quotient(Q)
    c1, c2, _fit = el_residual(Q)

    resolutions = []
    if coarse_check and g.n >= 16:
        g2 = make_grid(g.d, g.n // 2, g.half_width)
        sub = Q.values[::2] if g.d == 1 else Q.values[::2, ::2]
        run2 = _descend_quotient(g2, Field(g2, sub.copy()), cfg)
        resolutions.append((g2.n, gn_quotient(_finalize(run2.u))))
    resolutions.append((g.n, a_star))

    return GNResult(a_star=a_star, Q=Q,
                    nonlinear_check=a_star * lq_integral(Q, q),
                    el_constants=(c1, c2), resolutions=tuple(resolutions),
                    quotient_residual=best.residual)


def normalize_gn(u: Field) -> Field:
    """Dilate and rescale so both the mass and the fourth-order seminorm are 1."""
    kin = bilap_energy(u)
    mass = l2_norm_sq(u)
    if mass <= 0.0:
        raise ValueError("cannot normalize the zero field")
    if kin <= 0.0:
        raise ValueError("constant fields cannot be normalized")
    ell = (mass / kin) ** 0.25
    # below ~1e-9 the dilation would move nothing but roundoff, and the two
    # seminorms already match well inside the 1e-8 normalization contract
    v = u if abs(ell - 1.0) < 1e-9 else dilate(u, ell)
    return renormalize_mass(v)


def normalize_to_el(u: Field) -> Field:
    """Dilate and rescale onto the unit Euler-Lagrange normalization.

    If u solves the fourth-order equation with fitted constants (c1, c2), the
    mapped field v(x) = mu * u(x / lambda), lambda = c1^{1/4},
    mu = (c2/c1)^{1/(q-2)}, solves it with constants (1, 1).
    """
    q = critical_power(u.grid.d)
    c1, c2, _ = el_residual(u)
    if c1 <= 0.0 or c2 <= 0.0:
        raise ValueError(
            f"fitted constants ({c1:.3g}, {c2:.3g}) are not both positive; "
            "not an expected-sign stationary state")
    lam = c1**0.25
    mu = (c2 / c1) ** (1.0 / (q - 2.0))
    v = dilate(u, 1.0 / lam)  # v0(x) = lam^{-d/2} u(x/lam)
    return v * float(mu * lam ** (u.grid.d / 2.0))


def save_gn(result: GNResult, path) -> None:
    """Persist the profile as a snapshot plus a JSON sidecar."""
    base = Path(path)
    if base.suffix in (".bhf", ".json"):
        base = base.with_suffix("")
    write_snapshot(result.Q, base.with_suffix(".bhf"))
    g = result.Q.grid
    sidecar = {
        "a_star": result.a_star,
        "d": g.d,
        "n": g.n,
        "half_width": g.half_width,
        "el_constants": list(result.el_constants),
        "residuals": {
            "quotient_grad": result.quotient_residual,
            "nonlinear_check": result.nonlinear_check,
        },
        "resolutions": [list(pair) for pair in result.resolutions],
    }
    base.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_gn(path) -> GNResult:
    base = Path(path)
    if base.suffix in (".bhf", ".json"):
        base = base.with_suffix("")
    sidecar = json.loads(base.with_suffix(".json").read_text())
    Q = read_snapshot(base.with_suffix(".bhf"))
    g = Q.grid
    if (sidecar["d"], sidecar["n"]) != (g.d, g.n) or \
            abs(sidecar["half_width"] - g.half_width) > 1e-12:
        raise ValueError("sidecar geometry disagrees with the stored snapshot")
    a_star = float(sidecar["a_star"])
    q = critical_power(g.d)
    return GNResult(a_star=a_star, Q=Q,
                    nonlinear_check=a_star * lq_integral(Q, q),
                    el_constants=tuple(sidecar["el_constants"]),
                    resolutions=tuple(tuple(p) for p in sidecar["resolutions"]),
                    quotient_residual=float(
                        sidecar["residuals"]["quotient_grad"]))
