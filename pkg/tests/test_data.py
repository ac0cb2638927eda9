import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_sample
from octxai.data import (CSV_HEADER, GRID_NAMES, ZONE_NAMES, ConfigurationError, IntegrityError, ParseError,
                         ZoneMap, aggregate_zones, build_feature_matrix, cell_index, default_zone_map,
                         load_dataset, select_eyes, unflatten_grid, write_dataset, zone_means)
from octxai.synthgen import default_paper_spec, generate_cohort

ZONES = default_zone_map()


def _row(sid="7", group="HC", eye="L", layer="GCL", cells=None):
    cells = [30.0] * 64 if cells is None else cells
    return [sid, group, "40", "F", eye, layer, "31.5"] + [str(v) for v in cells]


def _write(path, rows, header=CSV_HEADER):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def test_default_zone_map_is_complete():
    counts = ZONES.counts()
    assert counts.sum() == 64
    assert np.all(counts > 0)
    assert ZONES.assignment[cell_index("5.3")] == 1
    assert ZONES.assignment[cell_index("5.4")] == 2


def test_zone_map_rejects_missing_zone(tmp_path):
    bad = np.ones((8, 8), dtype=int)
    with pytest.raises(ConfigurationError, match="zones without cells"):
        ZoneMap(bad)
    (tmp_path / "z.txt").write_text("1 2 3\n")
    with pytest.raises(ConfigurationError):
        ZoneMap.from_file(tmp_path / "z.txt")


def test_zone_map_file_round_trip(tmp_path):
    ZONES.to_file(tmp_path / "z.txt")
    assert np.array_equal(ZoneMap.from_file(tmp_path / "z.txt").assignment, ZONES.assignment)


def test_load_two_rows(tmp_path):
    p = _write(tmp_path / "d.csv", [_row("7", eye="L"), _row("7", eye="R")])
    samples = load_dataset(p)
    assert len(samples) == 2
    assert samples[0].quality_score == 31.5
    assert samples[1].laterality == "R"


def test_short_row_names_row_number(tmp_path):
    p = _write(tmp_path / "d.csv", [_row("1"), _row("2", cells=[30.0] * 63)])
    with pytest.raises(ParseError, match="row 3"):
        load_dataset(p)


@pytest.mark.parametrize("field,value", [(1, "XX"), (4, "B"), (5, "ONL"), (2, "forty")])
def test_bad_enum_or_number(tmp_path, field, value):
    row = _row()
    row[field] = value
    with pytest.raises(ParseError, match="row 2"):
        load_dataset(_write(tmp_path / "d.csv", [row]))


def test_non_numeric_cell(tmp_path):
    row = _row()
    row[20] = "abc"
    with pytest.raises(ParseError, match="row 2"):
        load_dataset(_write(tmp_path / "d.csv", [row]))


def test_duplicate_key(tmp_path):
    p = _write(tmp_path / "d.csv", [_row("7", eye="L"), _row("7", eye="L")])
    with pytest.raises(IntegrityError, match="duplicate"):
        load_dataset(p)


def test_bad_header(tmp_path):
    with pytest.raises(ParseError, match="row 1"):
        load_dataset(_write(tmp_path / "d.csv", [_row()], header=CSV_HEADER[:-1]))


def test_quality_filter_and_mirror(tmp_path):
    cells = list(range(64))
    rows = [_row("1", eye="L", cells=cells), _row("2", eye="R", cells=cells)]
    rows[1][6] = "20"
    p = _write(tmp_path / "d.csv", rows)
    assert len(load_dataset(p, min_quality=25)) == 1
    left = load_dataset(p, mirror_left=True)[0]
    assert left.grid[0, 0] == 7.0
    assert load_dataset(p)[0].grid[0, 0] == 0.0


def test_write_load_round_trip(tmp_path):
    samples = generate_cohort(default_paper_spec(seed=3))[:20]
    write_dataset(samples, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    assert [s.key for s in back] == [s.key for s in samples]
    assert all(np.array_equal(a.grid, b.grid) and a.age == b.age for a, b in zip(samples, back))


def test_sample_rejects_negative_cells():
    with pytest.raises(IntegrityError):
        make_sample(value=-1.0)


def test_zone_constant_field():
    grid = np.zeros((8, 8))
    grid[ZONES.cells(1)] = 41.78
    assert aggregate_zones(make_sample(grid=grid), ZONES)[0] == pytest.approx(41.78, abs=1e-12)
    assert np.all(aggregate_zones(make_sample(value=0.0), ZONES) == 0.0)


def test_zone_alternating_values():
    grid = np.zeros((8, 8))
    cells = list(zip(*np.nonzero(ZONES.cells(3))))
    for i, rc in enumerate(cells):
        grid[rc] = 28.0 if i % 2 == 0 else 29.0
    total = sum(grid[rc] for rc in cells)
    assert zone_means(grid, ZONES)[2] == pytest.approx(total / len(cells))
    assert zone_means(grid, ZONES)[2] == pytest.approx(28.5)


grids = arrays(np.float64, (8, 8), elements=st.floats(0, 200, allow_nan=False))


@given(grids, st.floats(0, 10))
def test_zone_aggregation_is_linear(grid, a):
    assert np.allclose(zone_means(a * grid, ZONES), a * zone_means(grid, ZONES), rtol=1e-12, atol=1e-9)


@given(grids, st.randoms(use_true_random=False))
def test_zone_aggregation_permutation_invariant(grid, rnd):
    shuffled = grid.copy()
    for z in range(1, 7):
        mask = ZONES.cells(z)
        vals = list(grid[mask])
        rnd.shuffle(vals)
        shuffled[mask] = vals
    assert np.allclose(zone_means(shuffled, ZONES), zone_means(grid, ZONES), rtol=1e-12)


def _subjects():
    return [make_sample("A", eye="L"), make_sample("A", eye="R"), make_sample("B", eye="R"),
            make_sample("C", eye="L", group="MS")]


def test_strategy_l_drops_right_only_subject():
    out = select_eyes(_subjects(), "L")
    assert {s.subject_id for s in out} == {"A", "C"}


def test_strategy_rand_keeps_single_eye():
    out = select_eyes(_subjects(), "Rand", rand_seed=5)
    by_id = {s.subject_id: s.laterality for s in out}
    assert by_id["B"] == "R" and by_id["C"] == "L"
    assert len(out) == 3


def test_strategy_rand_reproducible_and_uses_both_eyes():
    samples = [make_sample(f"S{i:02d}", eye=e) for i in range(40) for e in "LR"]
    a = select_eyes(samples, "Rand", rand_seed=9)
    b = select_eyes(samples, "Rand", rand_seed=9)
    assert [s.key for s in a] == [s.key for s in b]
    assert {s.laterality for s in a} == {"L", "R"}


def test_strategy_counts_on_cohort():
    gcl = [s for s in generate_cohort(default_paper_spec(seed=1)) if s.layer == "GCL"]
    assert len(select_eyes(gcl, "LR")) == 316
    for strategy in ("L", "R", "Rand"):
        out = select_eyes(gcl, strategy, 2)
        ids = [s.subject_id for s in out]
        assert len(ids) == len(set(ids))
    assert len(select_eyes(gcl, "Rand", 2)) == 170
    lr_ids = [s.subject_id for s in select_eyes(gcl, "LR")]
    assert max(lr_ids.count(i) for i in set(lr_ids)) == 2


def test_strategy_empty_result():
    with pytest.raises(ConfigurationError):
        select_eyes([make_sample("B", eye="R")], "L")


def test_feature_matrix_shapes_and_names():
    samples = [make_sample(f"S{i}", grid=np.arange(64.0).reshape(8, 8) + i) for i in range(3)]
    z = build_feature_matrix(samples, "Zones", ZONES)
    assert z.rows.shape == (3, 6) and z.feature_names == tuple(ZONE_NAMES)
    g = build_feature_matrix(samples, "Grid")
    assert g.rows.shape == (3, 64)
    j = g.feature_names.index("5.4")
    assert j == 4 * 8 + 3
    assert g.rows[0, j] == samples[0].grid[4, 3]
    assert g.feature_names == tuple(GRID_NAMES)


def test_feature_matrix_mixed_layers():
    with pytest.raises(IntegrityError):
        build_feature_matrix([make_sample("A"), make_sample("B", layer="RNFL")], "Zones")


@given(grids)
def test_flatten_round_trip(grid):
    fm = build_feature_matrix([make_sample(grid=grid)], "Grid")
    assert np.array_equal(unflatten_grid(fm.rows[0]), grid)
