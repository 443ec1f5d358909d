import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from dgpemu.data import Dataset, Scaling, holdout_split, load_csv, save_csv, scale_unit_cube, unscale
from dgpemu.errors import DegenerateColumn, DomainError, ParseError, SchemaError

COMPAS_INPUTS = ["m1", "q", "a", "Z", "kick", "alpha_ce", "lbv", "wr", "mt_eff", "sn", "ppisn"]


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadCsv:
    def test_two_columns(self, tmp_path):
        ds = load_csv(write(tmp_path, "x,y\n0.1,1\n0.2,2\n0.3,3\n"))
        assert (ds.n, ds.d) == (3, 1)
        assert ds.columns == ("x",)
        assert_array_equal(ds.y, [1, 2, 3])

    def test_target_anywhere(self, tmp_path):
        ds = load_csv(write(tmp_path, "out,a,b\n5,1,2\n"), target_column="out")
        assert ds.columns == ("a", "b")
        assert_array_equal(ds.X, [[1, 2]])

    def test_nan_row_reported(self, tmp_path):
        with pytest.raises(ParseError, match="line.*3"):
            load_csv(write(tmp_path, "x,y\n0.1,1\n0.2,nan\n"))

    def test_missing_target(self, tmp_path):
        with pytest.raises(SchemaError):
            load_csv(write(tmp_path, "x,z\n1,2\n"))

    @pytest.mark.parametrize("text", ["", "x,y\n", "x,y\n1,2,3\n", "x,y\n1,abc\n"])
    def test_malformed(self, tmp_path, text):
        with pytest.raises(ParseError):
            load_csv(write(tmp_path, text))

    def test_compas_schema(self, tmp_path):
        rng = np.random.default_rng(0)
        lines = [",".join(COMPAS_INPUTS + ["chirp_mass"])]
        for i in range(6):
            target = "NA" if i % 2 else f"{rng.uniform(5, 30):.4f}"
            lines.append(",".join(f"{v:.4f}" for v in rng.random(11)) + "," + target)
        path = write(tmp_path, "\n".join(lines) + "\n")
        ds = load_csv(path, target_column="chirp_mass", na_as_zero=True)
        assert ds.d == 11
        assert np.count_nonzero(ds.y == 0) == 3
        with pytest.raises(ParseError):
            load_csv(path, target_column="chirp_mass")

    def test_na_flag_only_for_target(self, tmp_path):
        with pytest.raises(ParseError):
            load_csv(write(tmp_path, "x,y\nNA,1\n"), na_as_zero=True)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        ds = Dataset(rng.normal(size=(20, 3)) * 1e5, rng.normal(size=20) / 3, ("a", "b", "c"))
        save_csv(tmp_path / "o.csv", ds)
        back = load_csv(tmp_path / "o.csv")
        assert_array_equal(back.X, ds.X)
        assert_array_equal(back.y, ds.y)
        assert back.columns == ds.columns


class TestScaling:
    def test_affine(self):
        ds = Dataset(np.array([[2.0], [4.0], [6.0]]), np.zeros(3), ("x",))
        assert_array_equal(scale_unit_cube(ds).X.ravel(), [0.0, 0.5, 1.0])

    def test_unit_column_unchanged(self):
        ds = Dataset(np.array([[0.0], [0.3], [1.0]]), np.zeros(3), ("x",))
        out = scale_unit_cube(ds)
        assert_array_equal(out.X, ds.X)
        assert_array_equal(out.scaling.lo, [0.0])
        assert_array_equal(out.scaling.hi, [1.0])

    def test_constant_column(self):
        ds = Dataset(np.array([[1.0, 2.0], [1.0, 3.0]]), np.zeros(2), ("a", "b"))
        with pytest.raises(DegenerateColumn, match="a"):
            scale_unit_cube(ds)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, (6, 2), elements=st.floats(-1e4, 1e4)))
    def test_inverse(self, X):
        if np.any(np.ptp(X, axis=0) < 1e-3):
            return
        ds = Dataset(X, np.zeros(6), ("a", "b"))
        scaled = scale_unit_cube(ds)
        assert scaled.X.min() >= -1e-12 and scaled.X.max() <= 1 + 1e-12
        assert_allclose(unscale(scaled).X, X, rtol=1e-12, atol=1e-12 * np.abs(X).max())

    def test_record_reuse_and_dict(self):
        rec = Scaling(np.array([0.0, 10.0]), np.array([2.0, 20.0]))
        ds = Dataset(np.array([[1.0, 15.0]]), np.zeros(1), ("a", "b"))
        assert_array_equal(scale_unit_cube(ds, rec).X, [[0.5, 0.5]])
        assert Scaling.from_dict(rec.to_dict()).to_dict() == rec.to_dict()


class TestHoldout:
    def make(self, n=10, nonzero_frac=None, seed=0):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=n)
        if nonzero_frac is not None:
            y[rng.permutation(n)[: int(round(n * (1 - nonzero_frac)))]] = 0.0
        return Dataset(rng.random((n, 2)), y, ("a", "b"))

    def test_empty_holdout(self):
        train, hold = holdout_split(self.make(), 0)
        assert hold.n == 0 and train.n == 10

    def test_deterministic(self):
        ds = self.make()
        a = holdout_split(ds, 3, seed=5)[1]
        b = holdout_split(ds, 3, seed=5)[1]
        assert_array_equal(a.X, b.X)
        assert a.n == 3

    def test_partition(self):
        ds = self.make()
        train, hold = holdout_split(ds, 4, seed=1)
        both = np.sort(np.concatenate([train.y, hold.y]))
        assert_array_equal(both, np.sort(ds.y))

    def test_stratified(self):
        ds = self.make(n=5000, nonzero_frac=0.24)
        _, hold = holdout_split(ds, 1000, stratify_on_nonzero=450, seed=0)
        assert hold.n == 1000
        assert np.count_nonzero(hold.y) == 450

    def test_stratum_too_small(self):
        ds = self.make(n=100, nonzero_frac=0.1)
        with pytest.raises(DomainError):
            holdout_split(ds, 50, stratify_on_nonzero=20)

    def test_bad_size(self):
        with pytest.raises(DomainError):
            holdout_split(self.make(), 10)
