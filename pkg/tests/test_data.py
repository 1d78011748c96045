"""CSV parsing, synthetic series, window construction, normalization, ACF."""

import numpy as np
import pytest

from mstune.data import (
    Normalizer,
    ParseError,
    SeriesTable,
    SplitSpec,
    acf_feature,
    load_csv,
    make_windows,
    synth_series,
)


def write(tmp_path, text, name="t.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_csv_plain(tmp_path):
    table = load_csv(write(tmp_path, "1,2\n3,4\n5,6\n"))
    assert table.length == 3
    assert table.columns == ["c0", "c1"]
    assert np.array_equal(table.values["c1"], [2, 4, 6])


def test_load_csv_header_and_timestamp(tmp_path):
    text = "date,a,b\n2024-01-01,1,2\n2024-01-02,3,4\n"
    table = load_csv(write(tmp_path, text))
    assert table.columns == ["a", "b"]
    assert table.length == 2
    assert np.array_equal(table.values["a"], [1, 3])


def test_load_csv_bad_cell_cites_row(tmp_path):
    text = "".join(f"{i},{i}\n" if i != 7 else "abc,7\n" for i in range(1, 10))
    with pytest.raises(ParseError, match="row 7"):
        load_csv(write(tmp_path, text))


def test_load_csv_ragged_row(tmp_path):
    with pytest.raises(ParseError, match="row 2"):
        load_csv(write(tmp_path, "1,2\n3\n"))


def test_series_table_unequal_columns():
    with pytest.raises(ValueError):
        SeriesTable(["a", "b"], {"a": np.ones(3), "b": np.ones(2)})


def test_make_windows_single_split_count():
    table = SeriesTable(["a"], {"a": np.arange(10.0)})
    ds = make_windows(table, 3, 2, split=None)["all"]
    assert len(ds) == 10 - (3 + 2) + 1
    w = ds.window(0)
    assert np.array_equal(w.context, [0, 1, 2])
    assert np.array_equal(w.horizon, [3, 4])


def test_make_windows_split_counts():
    table = SeriesTable(["a", "b"], {"a": np.arange(100.0), "b": np.arange(100.0)})
    splits = make_windows(table, 10, 5, split=SplitSpec(0.6, 0.2, 0.2))
    assert len(splits["train"]) == 2 * (60 - 15 + 1)
    assert len(splits["val"]) == 2 * (20 - 15 + 1)
    assert len(splits["test"]) == 2 * (20 - 15 + 1)


def test_make_windows_short_split_names_it():
    table = SeriesTable(["a"], {"a": np.arange(30.0)})
    with pytest.raises(ValueError, match="val"):
        make_windows(table, 10, 5, split=SplitSpec(0.6, 0.2, 0.2))


def test_windows_do_not_straddle_boundaries():
    table = SeriesTable(["a"], {"a": np.arange(100.0)})
    splits = make_windows(table, 10, 5, split=SplitSpec(0.6, 0.2, 0.2))
    bounds = SplitSpec(0.6, 0.2, 0.2).boundaries(100)
    for name, ds in splits.items():
        lo, hi = bounds[name]
        for i in range(len(ds)):
            w = ds.window(i)
            assert lo <= w.start and w.start + 15 <= hi


def test_window_count_random_cases():
    rng = np.random.default_rng(0)
    for _ in range(100):
        t = int(rng.integers(20, 200))
        c = int(rng.integers(1, 10))
        h = int(rng.integers(1, 10))
        if c + h > t:
            continue
        table = SeriesTable(["a"], {"a": np.zeros(t)})
        ds = make_windows(table, c, h, split=None)["all"]
        assert len(ds) == t - (c + h) + 1


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.5, 0.2)
    with pytest.raises(ValueError):
        SplitSpec(1.0, 0.0, 0.0)


def test_synth_zero_everything_is_zero():
    table = synth_series([(8, 0.0)], 0.0, 64, seed=0)
    assert np.array_equal(table.values["s0"], np.zeros(64))


def test_synth_period8_acf():
    table = synth_series([(8, 1.0)], 0.0, 1024, seed=1)
    acf = acf_feature(table.values["s0"], 8)
    assert acf[7] > 0.95  # lag 8


def test_synth_deterministic():
    a = synth_series([(8, 1.0), (64, 2.0)], 0.1, 512, seed=7)
    b = synth_series([(8, 1.0), (64, 2.0)], 0.1, 512, seed=7)
    assert a.values["s0"].tobytes() == b.values["s0"].tobytes()


def test_synth_bad_period():
    with pytest.raises(ValueError):
        synth_series([(1, 1.0)], 0.0, 16, seed=0)


def test_normalizer_constant_column_floor():
    table = SeriesTable(["a"], {"a": np.full(20, 5.0)})
    norm = Normalizer.fit(table, 10)
    out = norm.apply(table)
    assert np.allclose(out.values["a"], 0.0)


def test_normalizer_closed_form():
    table = SeriesTable(["a"], {"a": np.array([14.0])})
    norm = Normalizer({"a": 10.0}, {"a": 2.0})
    assert norm.apply(table).values["a"][0] == 2.0


def test_normalizer_round_trip():
    rng = np.random.default_rng(3)
    table = SeriesTable(["a"], {"a": rng.normal(3.0, 2.5, 200)})
    norm = Normalizer.fit(table, 140)
    back = norm.invert(norm.apply(table))
    assert np.abs(back.values["a"] - table.values["a"]).max() < 1e-12


def test_normalizer_stats_from_train_only():
    rng = np.random.default_rng(4)
    base = rng.normal(0, 1, 100)
    t1 = SeriesTable(["a"], {"a": base.copy()})
    mutated = base.copy()
    mutated[70:] += 100.0  # perturb val/test region only
    t2 = SeriesTable(["a"], {"a": mutated})
    n1 = Normalizer.fit(t1, 70)
    n2 = Normalizer.fit(t2, 70)
    assert n1.means == n2.means and n1.stds == n2.stds


def test_acf_white_noise_small():
    rng = np.random.default_rng(5)
    acf = acf_feature(rng.normal(0, 1, 1000), 10)
    assert np.abs(acf).max() < 0.1


def test_acf_alternating_exact():
    n = 64
    x = np.array([1.0, -1.0] * (n // 2))
    acf = acf_feature(x, 1)
    assert acf[0] == pytest.approx(-(n - 1) / n, abs=1e-12)


def test_acf_constant_zero():
    assert np.array_equal(acf_feature(np.full(50, 2.0), 5), np.zeros(5))


def test_acf_window_too_short():
    with pytest.raises(ValueError):
        acf_feature(np.zeros(5), 5)
