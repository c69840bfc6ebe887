import numpy as np
import pytest

from nlobs.constraints import DEFAULT_EPS_PI
from nlobs.scenario import SHIPPED, ScenarioError, load_scenario, parse_scenario, shipped_scenario


def test_shipped_default_has_reference_values():
    sc = shipped_scenario("rowat_s5")
    p = sc.plant.params
    assert (p.tau_m, p.tau_s, p.sigma_s, p.sigma_f, p.A_f) == (0.1666, 5.0, 0.8, 2.0, 1.0)
    c = sc.truth_canonical()
    np.testing.assert_allclose(c.theta, (-6.2, 6.0, -2.16, 1.2), atol=0.01)
    assert sc.constraints.enabled and sc.constraints.eps_pi == DEFAULT_EPS_PI
    assert sc.stem() == "rowat_s5"
    cfg = sc.observer_config()
    assert cfg.constraint is not None
    np.testing.assert_array_equal(cfg.omega, [1.0])


@pytest.mark.parametrize("name", SHIPPED)
def test_every_shipped_scenario_loads(name):
    sc = load_scenario(name)
    sc.validate()
    assert sc.integration.N * sc.integration.h == pytest.approx(sc.integration.T_final)


def test_defaults_for_empty_file():
    sc = parse_scenario("")
    assert sc.observer.epsilon == 0.01
    assert sc.integration.h == 1e-3
    np.testing.assert_array_equal(sc.initial_zeta(), [1.0, 0.0])
    np.testing.assert_allclose(sc.initial_theta(), [-8.0, 6.0, -2.75, 1.1])
    # auto frequencies for one lambda coordinate
    np.testing.assert_array_equal(sc.observer_config().omega, [1.0])


@pytest.mark.parametrize(
    "text, key",
    [
        ("[observer]\ngamma = 0\n", "observer.gamma"),
        ("[observer]\nB = 1, -1\n", "observer.B"),
        ("[observer]\nl = 1, 1\n", "observer.l"),
        ("[observer]\nepsilon = -1\n", "observer.epsilon"),
        ("[constraints]\neps_pi = 0.01\n", "constraints.eps_pi"),
        ("[plant]\ntau_m = 0\n", "plant.tau_m"),
        ("[plant]\nlambda_bounds = 2.5:3\n", "plant.lambda_bounds"),
        ("[plant]\ntheta_bounds = 1:2\n", "plant.theta_bounds"),
        ("[plant]\ndisturbance = wind\n", "plant.disturbance"),
        ("[plant]\ncolour = red\n", "plant.colour"),
        ("[integration]\nrecord_every = 2.5\n", "integration.record_every"),
        ("[integration]\nh = 0.3\nT_final = 1\n", "integration.T_final"),
        ("[bogus]\nx = 1\n", "bogus"),
        ("[plant]\ntau_m = abc\n", "plant.tau_m"),
        ("no section header\n", "file"),
    ],
)
def test_validation_errors_carry_key_path(text, key):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    assert str(info.value).startswith(key + ":")


def test_effective_config_round_trips():
    sc = shipped_scenario("rowat_s5")
    text = sc.effective_config()
    back = parse_scenario(text, name=sc.name)
    for sec in ("plant", "observer", "constraints", "integration", "outputs"):
        assert getattr(back, sec) == getattr(sc, sec)
    # every documented default shows up in the echo
    assert "offchart_ceiling = " in text and "renormalize = " in text


def test_effective_config_of_defaults_round_trips():
    sc = parse_scenario("")
    back = parse_scenario(sc.effective_config())
    assert back.observer == sc.observer and back.plant == sc.plant


def test_with_changes_revalidates():
    sc = shipped_scenario()
    sc2 = sc.with_changes("integration", T_final=5.0)
    assert sc2.integration.N == 500
    with pytest.raises(ScenarioError):
        sc.with_changes("observer", gamma=-1.0)


def test_load_from_path_sets_base_dir(tmp_path):
    f = tmp_path / "exp.ini"
    f.write_text("[integration]\nT_final = 1\n[outputs]\ndirectory = out\n")
    sc = load_scenario(f)
    assert sc.name == "exp" and sc.stem() == "exp"
    assert sc.output_dir() == tmp_path / "out"
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.ini")
    with pytest.raises(ScenarioError):
        shipped_scenario("nope")


def test_disturbance_sections():
    sc = parse_scenario("[plant]\ndisturbance = sine\ndisturbance_amplitude = 0.01\n")
    spec = sc.plant_spec()
    assert spec.delta_xi == 0.01
    sc = parse_scenario("[plant]\ndisturbance = noise\ndisturbance_amplitude = 0.02\ndisturbance_seed = 3\n")
    spec = sc.plant_spec()
    assert spec.delta_xi == 0.02
    assert spec.disturbance_within_bound(np.linspace(0, 5, 51))


def test_constraints_disabled():
    sc = parse_scenario("[constraints]\nenabled = no\n")
    assert sc.constraint() is None
    assert sc.observer_config().constraint is None
