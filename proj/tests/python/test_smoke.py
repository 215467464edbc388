import json
import math

import numpy as np
import pytest

import bsde


def test_closed_form_table_values():
    for dim, analytic in [(1, 6.9359), (5, 3.3105), (10, 2.3784), (20, 1.7009), (50, 1.0867)]:
        market = bsde.BlackScholesMarket.uniform(dim)
        assert abs(bsde.geometric_put_closed_form(market) - analytic) < 5e-4


def test_value_and_delta():
    market = bsde.BlackScholesMarket.uniform(1)
    value, delta = bsde.geometric_put_value_and_delta(market, 0.0, 100.0)
    assert value == pytest.approx(6.9359, abs=5e-4)
    assert -1.0 < delta < 0.0
    reduced = bsde.reduce_to_one_dim(market)
    assert reduced.sigma_hat == pytest.approx(0.2)


def test_paths_shape_and_determinism():
    market = bsde.BlackScholesMarket.uniform(3)
    problem = bsde.make_problem(bsde.PayoffKind.geometric_put, market)
    part = bsde.build_partition(10)
    states, increments = bsde.simulate_paths(problem, part, 500, seed=7)
    assert states.shape == (11, 500, 3)
    assert increments.shape == (10, 500, 3)
    assert np.all(states[0] == 100.0)
    again, _ = bsde.simulate_paths(problem, part, 500, seed=7, workers=3)
    assert np.array_equal(states, again)
    assert abs(increments.var() - part.step_size) < 0.1 * part.step_size


def test_train_and_evaluate():
    market = bsde.BlackScholesMarket.uniform(1)
    problem = bsde.make_problem(bsde.PayoffKind.geometric_put, market)
    part = bsde.build_partition(5)
    config = bsde.TrainConfig()
    config.iterations = 20
    config.eval_batch = 2048
    controls, report = bsde.train(problem, part, config)
    assert controls.size == 5
    assert report.iterations_run == 20
    assert len(report.loss_history) == 20
    ev = bsde.evaluate(controls, problem, part, 4096, seed=3)
    assert math.isfinite(ev.price) and ev.std_error > 0
    rec = bsde.measure_y_z_errors(controls, market, bsde.PayoffKind.geometric_put, part, 2048, 5)
    assert rec.n == 5 and rec.z_error_sq > 0


def test_bermudan_partition():
    part = bsde.build_partition(20, exercise_count=10)
    assert part.has_schedule() and part.exercise_count == 10
    with pytest.raises(ValueError):
        bsde.build_partition(15, exercise_count=10)


def test_variance_loss():
    assert bsde.variance_loss([1.0, 2.0, 3.0]) == pytest.approx(2.0 / 3.0)
    with pytest.raises(ValueError):
        bsde.variance_loss([1.0])


def test_config_errors_carry_field():
    with pytest.raises(bsde.ConfigError) as err:
        bsde.default_config(["market.stirke=1"])
    assert err.value.field == "market.stirke"
    with pytest.raises(bsde.ConfigError) as err:
        bsde.run_experiment('{"style": "bermudan", "n": 15}')
    assert err.value.field == "n"


def test_run_experiment_small():
    result = bsde.run_experiment(
        "{}", ["n=5", "train.iterations=5", "train.eval_batch=1024", 'output_dir=""']
    )
    assert json.loads(result["config"])["n"] == 5
    assert result["relative_error"] is not None
    assert result["iterations_run"] == 5


def test_basket_oracle():
    market = bsde.BlackScholesMarket.uniform(5)
    price, se = bsde.basket_call_mc_oracle(market, 200_000, seed=11)
    assert abs(price - 4.6343) < 4 * se + 0.02
