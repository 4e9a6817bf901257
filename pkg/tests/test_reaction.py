import numpy as np
import pytest

from cardiorom import APParameters, InvalidArgumentError, SingularityError, eval_reaction
from cardiorom.reaction import to_dimensionless, to_physical


def test_table_defaults():
    p = APParameters()
    assert (p.beta_t, p.beta_phi, p.delta_phi) == (12.9, 100.0, -80.0)
    assert (p.c, p.alpha, p.b, p.mu1, p.mu2, p.gamma) == (8.0, 0.01, 0.15, 0.2, 0.3, 0.002)


@pytest.mark.parametrize("Phi,phi", [(-80.0, 0.0), (20.0, 1.0), (-10.0, 0.7)])
def test_unit_transform(Phi, phi):
    assert to_dimensionless(Phi, APParameters()) == pytest.approx(phi, abs=1e-15)


def test_unit_round_trip():
    p = APParameters()
    Phi = np.linspace(-90.0, 30.0, 13)
    np.testing.assert_allclose(to_physical(to_dimensionless(Phi, p), p), Phi, rtol=1e-14)


def test_rest_is_equilibrium():
    f_phi, f_r = eval_reaction(np.zeros(3), np.zeros(3), APParameters())
    assert np.all(f_phi == 0.0) and np.all(f_r == 0.0)


def test_cubic_rate_at_half():
    f_phi, _ = eval_reaction(np.array([0.5]), np.array([0.0]), APParameters())
    # 8 * 0.5 * 0.49 * 0.5 = 0.98, times beta_phi / beta_t
    assert f_phi[0] == pytest.approx(100.0 / 12.9 * 0.98, rel=1e-14)


def test_recovery_rate_at_peak():
    _, f_r = eval_reaction(np.array([1.0]), np.array([0.0]), APParameters(gamma=0.002))
    assert f_r[0] == pytest.approx(0.0024, rel=1e-12)


@pytest.mark.parametrize("root", [0.0, 0.01, 1.0])
def test_cubic_roots(root):
    f_phi, _ = eval_reaction(np.array([root]), np.array([0.0]), APParameters())
    assert f_phi[0] == 0.0


def test_vectorized_equals_scalar_loop():
    rng = np.random.default_rng(3)
    p = APParameters(gamma=0.0071)
    phi = rng.uniform(-0.2, 1.2, 40)
    r = rng.uniform(0.0, 2.0, 40)
    f_phi, f_r = eval_reaction(phi, r, p)
    for i in range(40):
        a, b = phi[i], r[i]
        ref_phi = p.beta_phi / p.beta_t * (p.c * a * (a - p.alpha) * (1 - a) - b * a)
        ref_r = (p.gamma + p.mu1 * b / (p.mu2 + a)) * (-b - p.c * a * (a - p.b - 1))
        assert f_phi[i] == pytest.approx(ref_phi, rel=1e-13, abs=1e-15)
        assert f_r[i] == pytest.approx(ref_r, rel=1e-13, abs=1e-15)


def test_singular_denominator_names_node():
    phi = np.array([0.1, -0.3, 0.2])
    with pytest.raises(SingularityError) as exc:
        eval_reaction(phi, np.ones(3), APParameters())
    assert exc.value.node == 1


def test_parameter_validation_and_free_parameters():
    with pytest.raises(InvalidArgumentError):
        APParameters(beta_t=0.0)
    with pytest.raises(InvalidArgumentError):
        APParameters(mu2=-1.0)
    p = APParameters().with_parameter((0.0017, 488.0))
    assert (p.gamma, p.t_s) == (0.0017, 488.0)
    assert APParameters().with_parameter(0.004).gamma == 0.004
    with pytest.raises(InvalidArgumentError):
        APParameters().with_parameter([1, 2, 3])
