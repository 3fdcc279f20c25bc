import math

import numpy as np
import pytest

from lienard.integrate import integrate_perturbed
from lienard.model import DomainError, Perturbation, builtin
from lienard.periodic import ShootingError, continuation, period_map, shoot


def squares_forcing():
    return builtin("squares"), Perturbation.cosine(2, math.pi, [1.0, 0.0])


def test_period_map_examples():
    sys, pert = squares_forcing()
    np.testing.assert_array_equal(period_map(sys, pert, 0.0, np.zeros(4)), np.zeros(4))
    osc = builtin("oscillator")
    p2 = Perturbation.cosine(2, 2 * math.pi, [1.0, 0.0])
    z0 = np.array([0.3, -0.2, 0.1, 0.4])
    np.testing.assert_allclose(period_map(osc, p2, 0.0, z0), z0, atol=1e-9)
    with pytest.raises(DomainError):
        period_map(sys, pert, 0.1, [6.0, 0, 0, 0])


def test_shoot_eps_zero_is_equilibrium():
    sys, pert = squares_forcing()
    orb = shoot(sys, pert, 0.0)
    np.testing.assert_array_equal(orb.z_star, 0.0)
    assert orb.amplitude == 0.0 and orb.notes


def test_shoot_rejects_negative_eps():
    sys, pert = squares_forcing()
    with pytest.raises(ValueError):
        shoot(sys, pert, -0.1)


def test_shoot_small_eps_orbit():
    # off resonance the forced x1 response of x'' + x = eps cos 2t is eps/3
    sys, pert = squares_forcing()
    orb = shoot(sys, pert, 0.1)
    assert orb.residual < 1e-9
    assert orb.component_amplitudes[0] == pytest.approx(0.1 / 3, rel=0.2)
    assert orb.component_amplitudes[1] < 1e-9
    assert orb.multipliers.size == 4
    assert np.all(orb.multiplier_moduli <= 1.0)


def test_residual_reverified_independently():
    sys, pert = squares_forcing()
    orb = shoot(sys, pert, 0.05)
    tr = integrate_perturbed(sys, pert, 0.05, orb.z_star, (0.0, math.pi), 1e-12, 1e-12, convergence_radius=None)
    assert np.linalg.norm(tr.final - orb.z_star) < 1e-9


def test_orbit_is_not_constant():
    sys, pert = squares_forcing()
    orb = shoot(sys, pert, 0.1)
    half = orb.t.size // 2
    assert np.linalg.norm(orb.samples[0] - orb.samples[half]) > 1e-3
    np.testing.assert_allclose(orb.samples[-1], orb.samples[0], atol=1e-9)


def test_warm_start_converges_quickly():
    sys, pert = squares_forcing()
    first = shoot(sys, pert, 0.1)
    second = shoot(sys, pert, 0.05, first.z_star)
    assert second.newton_steps <= 5


def test_orbital_stability_on_ellipses():
    sys = builtin("ellipses")
    pert = Perturbation.cosine(2, math.pi, [1.0, 0.5])
    orb = shoot(sys, pert, 0.1)
    assert orb.stable
    z0 = orb.z_star + 1e-3 * np.array([1.0, -1.0, 0.5, 0.5])
    tr = integrate_perturbed(sys, pert, 0.1, z0, (0.0, 20 * math.pi), 1e-12, 1e-12, convergence_radius=None)
    assert np.linalg.norm(tr.final - orb.z_star) < 1e-5


def test_singular_jacobian_is_reported():
    # undamped and forced at the natural period: the monodromy is the identity
    osc = builtin("oscillator")
    pert = Perturbation.cosine(2, 2 * math.pi, [1.0, 0.0])
    with pytest.raises(ShootingError):
        shoot(osc, pert, 0.1)


def test_continuation_examples():
    sys, pert = squares_forcing()
    res = continuation(sys, pert, [0.2, 0.1, 0.05, 0.025])
    assert len(res.orbits) == 4
    assert res.trend == "PASS"
    assert res.largest_converged_eps == 0.2
    amps = [o.amplitude for o in res.orbits]
    assert all(b < a for a, b in zip(amps, amps[1:]))


def test_continuation_single_point():
    sys, pert = squares_forcing()
    res = continuation(sys, pert, [0.1])
    assert res.trend == "PASS" and res.note == "insufficient points for trend"


def test_continuation_trailing_zero():
    sys, pert = squares_forcing()
    res = continuation(sys, pert, [0.1, 0.05, 0.0])
    assert len(res.orbits) == 3
    np.testing.assert_array_equal(res.orbits[-1].z_star, 0.0)


@pytest.mark.parametrize("bad", [[], [0.1, 0.2], [0.1, 0.1], [0.1, 0.0, 0.0], [0.1, -0.1]])
def test_continuation_rejects_bad_lists(bad):
    sys, pert = squares_forcing()
    with pytest.raises(ValueError):
        continuation(sys, pert, bad)


def test_csv_and_summary(tmp_path):
    sys, pert = squares_forcing()
    orb = shoot(sys, pert, 0.05, samples=64)
    path = tmp_path / "orbit.csv"
    orb.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# eps=0.05")
    assert lines[1] == "t,x1,x2,y1,y2,norm"
    data = np.loadtxt(path, delimiter=",", skiprows=2)
    assert data.shape == (65, 6)
    s = orb.summary()
    assert s["eps"] == 0.05 and len(s["multipliers"]) == 4
