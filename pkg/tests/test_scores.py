import numpy as np
import pytest

from pivotalcp.errors import (
    DimensionMismatchError,
    NumericalError,
    ValidationError,
)
from pivotalcp.scores import (
    Dataset,
    LabeledSample,
    ScoreFunction,
    evaluate_score,
    evaluate_scores,
    split_dataset,
)


def make_dataset(n, seed=0, role="train"):
    rng = np.random.Generator(np.random.Philox(seed))
    return Dataset(rng.normal(size=(n, 2)), rng.normal(size=(n, 1)), role)


class TestLabeledSample:
    def test_valid(self):
        s = LabeledSample([1.0, 2.0], [3.0])
        assert s.features.shape == (2,)
        assert s.outcome.shape == (1,)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            LabeledSample([], [1.0])

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericalError):
            LabeledSample([np.nan], [1.0])


class TestDataset:
    def test_shapes_and_roles(self):
        data = make_dataset(5)
        assert len(data) == 5 and data.p == 2 and data.d == 1
        assert data.with_role("test").role == "test"

    def test_unknown_role(self):
        with pytest.raises(ValidationError):
            make_dataset(3, role="validation")

    def test_row_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            Dataset(np.zeros((3, 1)), np.zeros((2, 1)))

    def test_immutable(self):
        data = make_dataset(3)
        with pytest.raises(ValueError):
            data.features[0, 0] = 1.0

    def test_csv_round_trip(self, tmp_path):
        data = make_dataset(7)
        path = tmp_path / "data.csv"
        data.save_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "x_0,x_1,y_0"
        loaded = Dataset.load_csv(path)
        np.testing.assert_array_equal(loaded.features, data.features)
        np.testing.assert_array_equal(loaded.outcomes, data.outcomes)

    def test_csv_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValidationError):
            Dataset.load_csv(path)


class TestEvaluateScore:
    def test_absolute_residual_zero(self):
        # zero outcome with a zero predictor scores zero
        f = ScoreFunction("absolute_residual")
        assert evaluate_score(f, [0.0], [0.0]) == 0.0

    def test_raw_response_identity(self):
        # the raw response score is the outcome itself
        f = ScoreFunction("raw_response")
        assert evaluate_score(f, [0.0], [-1.3]) == -1.3

    def test_scaled_linf(self):
        # max of |1|/1 and |-4|/2 is 2
        f = ScoreFunction(
            "scaled_linf_residual",
            predictor=lambda x: np.zeros(2),
            scale=[1.0, 2.0],
        )
        assert evaluate_score(f, [0.0], [1.0, -4.0]) == 2.0

    def test_negative_density(self):
        f = ScoreFunction("negative_density", density=lambda x, y: 0.25)
        assert evaluate_score(f, [0.0], [1.0]) == -0.25

    def test_pure_function(self):
        f = ScoreFunction("absolute_residual", predictor=lambda x: np.array([x[0]]))
        a = evaluate_score(f, [0.3], [1.7])
        b = evaluate_score(f, [0.3], [1.7])
        assert a == b

    def test_sign_flip_symmetry(self):
        f = ScoreFunction(
            "scaled_linf_residual",
            predictor=lambda x: np.array([0.5, -0.5]),
            scale=[1.0, 3.0],
        )
        rng = np.random.Generator(np.random.Philox(3))
        for _ in range(20):
            r = rng.normal(size=2)
            center = np.array([0.5, -0.5])
            assert evaluate_score(f, [0.0], center + r) == pytest.approx(
                evaluate_score(f, [0.0], center - r)
            )

    def test_dimension_checks(self):
        f = ScoreFunction("absolute_residual")
        with pytest.raises(DimensionMismatchError):
            evaluate_score(f, [0.0], [1.0, 2.0])

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            ScoreFunction("squared_residual")

    def test_missing_requirements(self):
        with pytest.raises(ValidationError):
            ScoreFunction("negative_density")
        with pytest.raises(ValidationError):
            ScoreFunction("scaled_linf_residual", predictor=lambda x: x)
        with pytest.raises(ValidationError):
            ScoreFunction(
                "scaled_linf_residual",
                predictor=lambda x: x,
                scale=[1.0, -1.0],
            )

    def test_batch_matches_scalar(self):
        data = make_dataset(10)
        f = ScoreFunction("absolute_residual")
        batch = evaluate_scores(f, data)
        single = [evaluate_score(f, data.features[i], data.outcomes[i])
                  for i in range(10)]
        np.testing.assert_array_equal(batch, single)


class TestSplitDataset:
    def test_exact_fractions(self):
        # 10 samples at (0.5, 0.3, 0.2) split 5/3/2
        parts = split_dataset(make_dataset(10), (0.5, 0.3, 0.2), seed=7)
        assert [len(p) for p in parts] == [5, 3, 2]
        assert [p.role for p in parts] == ["train", "calibration", "test"]

    def test_floor_allocation(self):
        # 7 samples at thirds: floor gives 2+2, remainder to train
        parts = split_dataset(make_dataset(7), (1 / 3, 1 / 3, 1 / 3), seed=1)
        assert [len(p) for p in parts] == [3, 2, 2]

    def test_deterministic(self):
        data = make_dataset(20)
        a = split_dataset(data, (0.5, 0.25, 0.25), seed=9)
        b = split_dataset(data, (0.5, 0.25, 0.25), seed=9)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.features, pb.features)

    def test_partition_property(self):
        data = make_dataset(23)
        parts = split_dataset(data, (0.5, 0.3, 0.2), seed=4)
        rows = np.concatenate([p.features for p in parts])
        assert rows.shape == data.features.shape
        original = {tuple(r) for r in data.features}
        assert {tuple(r) for r in rows} == original

    def test_bad_fractions(self):
        with pytest.raises(ValidationError):
            split_dataset(make_dataset(10), (0.5, 0.5, 0.5), seed=0)
        with pytest.raises(ValidationError):
            split_dataset(make_dataset(2), (0.98, 0.01, 0.01), seed=0)
