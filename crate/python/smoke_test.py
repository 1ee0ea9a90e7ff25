"""Smoke test for the robustqos extension module.

Build and install first:

    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/robustqos-*.whl
"""

import math

import robustqos as rq


def check_losses():
    assert rq.loss_value(0.0) == 0.0
    assert abs(rq.loss_value(1.0, gamma=1.0) - math.log(2.0)) < 1e-15
    assert abs(rq.influence(1.0) - 1.0) < 1e-15
    assert abs(rq.cauchy_weight(2.0, 0.0) - 0.25) < 1e-15
    assert rq.loss_value(3.0, loss="l2") == 4.5
    assert rq.influence(-2.0, loss="l1") == -1.0
    try:
        rq.cauchy_weight(0.0, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("gamma = 0 must be rejected")


def check_matrix_pipeline():
    data = rq.generate_synthetic(users=30, services=20, true_rank=3, seed=1)
    matrix = data["observations"]
    assert isinstance(matrix, rq.ObservationMatrix)
    assert len(matrix) == 300 and len(data["planted"]) == 30

    train, test = matrix.split(0.8, 7)
    assert len(train) + len(test) == len(matrix)

    scores = {}
    for loss in ("cauchy", "l2"):
        model = rq.fit_mf(train, loss=loss, rank=3, eta=0.001, max_iters=1500, seed=3)
        assert len(model.user_factors) == 30 and len(model.user_factors[0]) == 3
        pairs = [(u, s) for u, s, _ in test.entries()]
        predicted = model.predict(pairs)
        report = rq.evaluate_excluding_outliers(test.values(), predicted, 0.1)
        assert report["n_removed"] == 6
        scores[loss] = report["mae"]
    assert scores["cauchy"] < scores["l2"], scores


def check_tensor_and_outliers():
    data = rq.generate_synthetic(users=8, services=6, times=5, true_rank=2, seed=2)
    tensor = data["observations"]
    assert isinstance(tensor, rq.ObservationTensor)
    model = rq.fit_tf(tensor, rank=2, max_iters=100)
    predictions = model.predict([(e[0], e[1], e[2]) for e in tensor.entries()])
    assert all(p >= 0.0 for p in predictions)
    assert rq.rmse(tensor.values(), predictions) >= rq.mae(tensor.values(), predictions)

    values = [1.0 + 0.01 * i for i in range(99)] + [50.0]
    scores = rq.outlier_scores(values, seed=4)
    assert max(range(100), key=scores.__getitem__) == 99

    train, test = rq.split(10, 0.3, 5)
    assert len(train) == 3 and sorted(train + test) == list(range(10))


def check_divergence():
    matrix = rq.ObservationMatrix(2, 2, [(0, 0, 100.0), (1, 1, 200.0), (0, 1, 150.0)])
    try:
        rq.fit_mf(matrix, loss="l2", rank=1, eta=50.0, lambda_=0.0, init_scale=1.0)
    except rq.DivergenceError:
        pass
    else:
        raise AssertionError("expected divergence")


if __name__ == "__main__":
    check_losses()
    check_matrix_pipeline()
    check_tensor_and_outliers()
    check_divergence()
    print("python smoke test passed")
