import json

import numpy as np
import pytest

from hiv_delay_control.errors import ConfigError
from hiv_delay_control.model_core import (
    EquilibriumSet,
    InitialData,
    ModelParams,
    State,
    equilibria,
    equilibrium_residual,
    reproduction_numbers,
    rhs_controlled,
    rhs_uncontrolled,
)

pytestmark = pytest.mark.unit


def random_params(rng: np.random.Generator) -> ModelParams:
    """Draws spanning R0 < 1, 1 < R0 < 1 + R1 and R0 > 1 + R1"""
    return ModelParams(
        lam=rng.uniform(1.0, 10.0),
        m=rng.uniform(0.01, 0.1),
        r=10 ** rng.uniform(-6, -2.5),
        u=rng.uniform(0.1, 1.0),
        s=rng.uniform(0.01, 0.1),
        k=rng.uniform(50.0, 300.0),
        v=rng.uniform(0.5, 3.0),
        a=rng.uniform(0.05, 0.5),
        n=rng.uniform(0.1, 1.0),
    )


class TestModelParams:
    def test_defaults(self, params):
        assert params.to_dict() == {
            "lambda": 5.0,
            "m": 0.03,
            "r": 0.0014,
            "u": 0.32,
            "s": 0.05,
            "k": 153.6,
            "v": 1.0,
            "a": 0.2,
            "n": 0.3,
            "t_f": 50.0,
            "tau": 0.5,
            "xi": 0.2,
            "w": 1.0,
        }

    @pytest.mark.parametrize(
        "overrides, key",
        [
            ({"m": -0.03}, "m"),
            ({"lam": 0.0}, "lambda"),
            ({"tau": -0.5}, "tau"),
            ({"t_f": 0.4}, "t_f"),
            ({"w": float("nan")}, "w"),
        ],
    )
    def test_invalid_values_name_the_key(self, overrides, key):
        with pytest.raises(ConfigError) as info:
            ModelParams(**overrides)
        assert info.value.key == key

    def test_json_round_trip(self, tmp_path):
        original = ModelParams(tau=0.0, xi=0.0, w=5.0)
        path = tmp_path / "params.json"
        path.write_text(json.dumps(original.to_dict()), encoding="utf-8")
        assert ModelParams.from_json(path) == original

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as info:
            ModelParams.from_dict({"lambda": 5.0, "gamma": 1.0})
        assert info.value.key == "gamma"

    def test_non_numeric_value_rejected(self):
        with pytest.raises(ConfigError) as info:
            ModelParams.from_dict({"k": "153.6"})
        assert info.value.key == "k"

    def test_with_value_accepts_json_names(self, params):
        assert params.with_value("lambda", 6.0).lam == 6.0
        assert params.with_value("r", 0.002).get("r") == 0.002


class TestInitialData:
    def test_defaults(self, init):
        assert init.state0 == State(45.0, 3.0, 75.0, 20.0)
        assert init.c_hist == 0.0

    def test_control_history_must_be_a_fraction(self):
        with pytest.raises(ConfigError):
            InitialData(c_hist=1.5)

    def test_negative_history_rejected(self):
        with pytest.raises(ConfigError) as info:
            InitialData(V_hist=-1.0)
        assert info.value.key == "V_hist"


class TestThresholds:
    def test_table_values(self, params):
        R0, R1 = reproduction_numbers(params)
        assert R0 == pytest.approx(112.0, abs=1e-9)
        assert R1 == pytest.approx(10.752, abs=1e-9)

    def test_critical_rate_gives_unit_R0(self):
        p = ModelParams()
        critical = p.with_value("r", p.m * p.u * p.v / (p.k * p.lam))
        assert reproduction_numbers(critical)[0] == pytest.approx(1.0, abs=1e-12)


class TestEquilibria:
    def test_table_equilibria(self, params):
        found = equilibria(params)
        assert found.E0 == pytest.approx((5.0 / 0.03, 0.0, 0.0, 0.0))
        assert found.E1.Z == pytest.approx(0.32 / (153.6 * 0.0014), rel=1e-12)
        assert found.E1.T == 0.0
        np.testing.assert_allclose(found.E2, (14.182, 1.5, 230.4, 54.5939), atol=5e-4)

    def test_residuals_vanish(self, params):
        for name, state in equilibria(params).present().items():
            assert equilibrium_residual(state, params) < 1e-9, name

    def test_subcritical_has_only_E0(self, subcritical):
        found = equilibria(subcritical)
        assert found.R0 == pytest.approx(0.56)
        assert list(found.present()) == ["E0"]

    def test_boundary_flags(self):
        p = ModelParams()
        critical = p.with_value("r", p.m * p.u * p.v / (p.k * p.lam))
        found = equilibria(critical)
        assert found.e1_boundary
        assert found.E1 is None

    def test_existence_conditions_on_random_draws(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            p = random_params(rng)
            found = equilibria(p)
            assert (found.E1 is not None) == (found.R0 > 1.0)
            assert (found.E2 is not None) == (found.R0 > 1.0 + found.R1)
            for state in found.present().values():
                assert equilibrium_residual(state, p) < 1e-9 * max(1.0, max(state))

    def test_document_round_trip(self, params):
        found = equilibria(params)
        document = json.loads(json.dumps(found.to_dict(params)))
        assert "residual" in document["equilibria"]["E2"]
        assert EquilibriumSet.from_dict(document) == found


class TestVectorField:
    def test_hand_substitution(self, params):
        derivative = rhs_controlled(State(45.0, 3.0, 75.0, 20.0), 45.0, 75.0, 0.0, params)
        np.testing.assert_allclose(derivative, (-1.075, 0.765, 385.8, 6.0), rtol=1e-12, atol=1e-12)

    def test_equilibrium_annihilates_field(self, params):
        E2 = equilibria(params).E2
        assert max(abs(x) for x in rhs_controlled(E2, E2.Z, E2.V, 0.0, params)) < 1e-9

    @pytest.mark.parametrize("c", [0.0, 0.3, 1.0])
    def test_virus_free_dynamics_decouple(self, params, c):
        derivative = rhs_controlled(State(100.0, 0.0, 0.0, 0.0), 80.0, 0.0, c, params)
        assert derivative == pytest.approx((5.0 - 0.03 * 100.0, 0.0, 0.0, 0.0))

    def test_uncontrolled_path_is_identical(self):
        rng = np.random.default_rng(3)
        p = ModelParams()
        for _ in range(50):
            state = State(*rng.uniform(0.0, 300.0, 4))
            Zd, Vd = rng.uniform(0.0, 300.0, 2)
            assert rhs_controlled(state, Zd, Vd, 0.0, p) == rhs_uncontrolled(state, Zd, Vd, p)

    def test_treatment_monotonicity(self, params):
        state = State(45.0, 3.0, 75.0, 20.0)
        low = rhs_controlled(state, 45.0, 75.0, 0.2, params)
        high = rhs_controlled(state, 45.0, 75.0, 0.8, params)
        assert high.Z >= low.Z
        assert high.I <= low.I
