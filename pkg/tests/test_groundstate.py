import numpy as np
import pytest
from scipy.linalg import eigh

from biharm.energy import energy
from biharm.field import (Field, l2_norm_sq, renormalize_mass,
                          write_snapshot)
from biharm.grid import make_grid, quadrature
from biharm.groundstate import (InitSpec, SolveConfig, SolveStatus,
                                initial_field, potential_argmin, solve,
                                trial_upper_bound, write_iteration_log)
from biharm.potentials import GaussianWell, Harmonic, PowerWell, Zero, sample
from biharm.potentials import sobolev_lower_bound


def _unit_gaussian(g, width=1.0):
    r2 = sum(m**2 for m in g.meshes())
    return renormalize_mass(Field(g, np.exp(-r2 / (2.0 * width**2))))


@pytest.fixture(scope="module")
def harmonic_128():
    g = make_grid(1, 128, 8.0)
    cfg = SolveConfig(tol_grad=1e-8, max_iters=4000, precondition=True)
    return g, solve(g, Harmonic(1.0), 0.0, cfg)


@pytest.fixture(scope="module")
def well_run():
    g = make_grid(1, 256, 16.0)
    V = GaussianWell(depth=1.0, width=1.0)
    cfg = SolveConfig(tol_grad=1e-8, max_iters=4000, precondition=True)
    return g, V, solve(g, V, 8.0, cfg)


def test_linear_ground_state_matches_eigensolver(harmonic_128):
    g, res = harmonic_128
    assert res.status is SolveStatus.CONVERGED
    vpot = sample(Harmonic(1.0), g).values

    # dense operator matrix: fourth-order symbol applied columnwise + diag(V)
    k4 = g.k_quad
    kin = np.real(np.fft.ifft(k4[:, None] * np.fft.fft(np.eye(g.n), axis=0),
                              axis=0))
    mat = 0.5 * (kin + kin.T) + np.diag(vpot)
    lams, vecs = eigh(mat)
    lam = float(lams[0])
    phi = vecs[:, 0]
    phi = phi / np.sqrt(quadrature(g, phi * phi))
    overlap = abs(quadrature(g, res.minimizer.values * phi))
    assert abs(res.breakdown.total - lam) < 1e-9
    assert overlap > 1.0 - 1e-6
    # with no nonlinear term the multiplier is the eigenvalue itself
    assert abs(res.mu - res.breakdown.total) < 1e-8


def test_resolution_doubling_energy_agreement(harmonic_128):
    g, res = harmonic_128
    g2 = make_grid(1, 256, 8.0)
    cfg = SolveConfig(tol_grad=1e-8, max_iters=4000, precondition=True)
    res2 = solve(g2, Harmonic(1.0), 0.0, cfg)
    assert res2.status is SolveStatus.CONVERGED
    assert abs(res.breakdown.total - res2.breakdown.total) < 1e-7


def test_energy_strictly_decreases_with_coupling(harmonic_128):
    g, res0 = harmonic_128
    cfg = SolveConfig(tol_grad=1e-8, max_iters=4000, precondition=True)
    res8 = solve(g, Harmonic(1.0), 8.0, cfg)
    assert res8.status is SolveStatus.CONVERGED
    assert res8.breakdown.total < res0.breakdown.total


def test_history_monotone_mass_exact_and_log_roundtrip(well_run, tmp_path):
    g, V, res = well_run
    assert res.status is SolveStatus.CONVERGED
    assert res.grad_residual <= 1e-8
    assert abs(l2_norm_sq(res.minimizer) - 1.0) < 1e-12
    energies = [row[1] for row in res.history]
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))
    assert res.history[0][0] == 0
    assert len(res.history) == res.iterations + 1

    path = tmp_path / "descent.csv"
    write_iteration_log(res, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iter,energy,grad_residual,step_size"
    assert len(lines) == len(res.history) + 1
    last = lines[-1].split(",")
    assert int(last[0]) == res.history[-1][0]
    assert float(last[1]) == pytest.approx(res.breakdown.total, rel=1e-15)


def test_converged_well_respects_sobolev_floor(well_run):
    g, V, res = well_run
    ceiling = sobolev_lower_bound(V, g, 0.25)
    assert res.breakdown.total >= -ceiling - 1e-9


def test_preconditioning_reaches_same_state():
    g = make_grid(1, 16, 6.0)
    V = Harmonic(1.0)
    plain = solve(g, V, 0.0, SolveConfig(tol_grad=1e-7, max_iters=60000))
    fast = solve(g, V, 0.0, SolveConfig(tol_grad=1e-7, max_iters=4000,
                                        precondition=True))
    assert plain.status is SolveStatus.CONVERGED
    assert fast.status is SolveStatus.CONVERGED
    assert abs(plain.breakdown.total - fast.breakdown.total) < 1e-8
    d2 = min(l2_norm_sq(plain.minimizer - fast.minimizer),
             l2_norm_sq(plain.minimizer + fast.minimizer))
    assert np.sqrt(d2) < 1e-4


def test_supercritical_coupling_diverges_below_floor():
    # a = 20 exceeds the quotient of every state (the gaussian already gives
    # 16.56), so descent concentrates without bound; the floor is the witness.
    g = make_grid(1, 256, 16.0)
    cfg = SolveConfig(tol_grad=1e-10, max_iters=20000, precondition=True)
    res = solve(g, Zero(), 20.0, cfg)
    assert res.status is SolveStatus.DIVERGED_BELOW_FLOOR
    assert res.breakdown.total < cfg.energy_floor


def test_floor_hit_at_initialization():
    g = make_grid(1, 512, 16.0)
    profile = _unit_gaussian(g)
    cfg = SolveConfig(init=InitSpec(kind="dilated_Q", ell=12.0),
                      precondition=True)
    res = solve(g, Zero(), 20.0, cfg, profile=profile)
    assert res.status is SolveStatus.DIVERGED_BELOW_FLOOR
    assert res.iterations == 0
    assert res.breakdown.total < cfg.energy_floor
    assert res.init_label == "dilated_Q"


def test_gaussian_init_sits_at_potential_minimum():
    g = make_grid(1, 128, 8.0)
    V = GaussianWell(depth=1.0, width=1.0, center=(3.0,))
    assert potential_argmin(V, g)[0] == pytest.approx(3.0, abs=1e-12)
    u = initial_field(g, V, InitSpec())
    assert g.axes[0][int(np.argmax(u.values))] == pytest.approx(3.0)
    assert abs(l2_norm_sq(u) - 1.0) < 1e-12
    # constant potential: centered at the origin, not at the first node
    assert np.all(potential_argmin(Zero(), g) == 0.0)


def test_constant_and_file_inits(tmp_path):
    g = make_grid(1, 64, 8.0)
    u = initial_field(g, Zero(), InitSpec(kind="constant"))
    assert np.ptp(u.values) == 0.0
    assert abs(l2_norm_sq(u) - 1.0) < 1e-12

    v = _unit_gaussian(g) * 3.0
    path = tmp_path / "seed.bhf"
    write_snapshot(v, path)
    w = initial_field(g, Zero(), InitSpec(kind="file", path=str(path)))
    assert abs(l2_norm_sq(w) - 1.0) < 1e-12
    corr = quadrature(g, w.values * v.values) / np.sqrt(l2_norm_sq(v))
    assert corr == pytest.approx(1.0, rel=1e-12)

    other = make_grid(1, 32, 8.0)
    with pytest.raises(ValueError):
        initial_field(other, Zero(), InitSpec(kind="file", path=str(path)))


def test_init_and_config_validation():
    with pytest.raises(ValueError, match="unknown init kind"):
        InitSpec(kind="plane_wave")
    with pytest.raises(ValueError):
        InitSpec(width=-1.0)
    with pytest.raises(ValueError, match="needs a path"):
        InitSpec(kind="file")
    g = make_grid(1, 32, 8.0)
    with pytest.raises(ValueError, match="reference profile"):
        initial_field(g, Zero(), InitSpec(kind="dilated_Q", ell=2.0))
    for bad in (dict(step0=0.0), dict(shrink=1.2), dict(grow=0.9),
                dict(shrink=0.5, grow=0.4), dict(tol_grad=0.0),
                dict(max_iters=0), dict(energy_floor=0.5)):
        with pytest.raises(ValueError):
            SolveConfig(**bad)


def test_solve_rejects_bad_problems():
    g = make_grid(1, 32, 8.0)
    with pytest.raises(ValueError, match="nonnegative"):
        solve(g, Zero(), -1.0)
    with pytest.raises(ValueError, match="neither"):
        solve(g, PowerWell(depth=1.0, exponent=2.0), 1.0)


@pytest.mark.filterwarnings("ignore::biharm.ResolutionWarning")
def test_trial_state_upper_bounds_the_minimum(well_run):
    g, V, res = well_run
    ub = trial_upper_bound(g, V, 8.0, eps=0.5, profile=_unit_gaussian(g))
    assert res.breakdown.total <= ub + 1e-8


@pytest.mark.filterwarnings("ignore::biharm.ResolutionWarning")
def test_trial_bound_centering_and_errors():
    g = make_grid(1, 256, 16.0)
    prof = _unit_gaussian(g)
    V = GaussianWell(depth=1.0, width=1.0, center=(2.0,))
    auto = trial_upper_bound(g, V, 4.0, eps=0.5, profile=prof)
    explicit = trial_upper_bound(g, V, 4.0, eps=0.5, profile=prof, x0=(2.0,))
    assert auto == pytest.approx(explicit, rel=1e-12)
    # the centered trial state feels the well; an off-center one does not
    far = trial_upper_bound(g, V, 4.0, eps=0.5, profile=prof, x0=(-8.0,))
    assert auto < far
    with pytest.raises(ValueError, match="cutoff radius"):
        trial_upper_bound(g, V, 4.0, eps=1e-9, profile=prof)
    with pytest.raises(ValueError, match="positive"):
        trial_upper_bound(g, V, 4.0, eps=0.0, profile=prof)


def test_solve_2d_smoke():
    g = make_grid(2, 32, 8.0)
    cfg = SolveConfig(tol_grad=1e-6, max_iters=2000, precondition=True)
    res = solve(g, Harmonic(1.0), 0.0, cfg)
    assert res.status is SolveStatus.CONVERGED
    assert abs(l2_norm_sq(res.minimizer) - 1.0) < 1e-12
    assert res.breakdown.total > 0.0
