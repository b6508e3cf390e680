import io
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mobcurriculum.core import (DataError, Dataset, GridSpec, PoiTable, TimeSpec, Trajectory, ingest_poi,
                                ingest_trajectories, split_by_user, trajectories_to_csv, validate, write_poi)
from mobcurriculum.synth import SynthConfig, desk_config, synth_generate


def csv_of(rows, header="uid,d,t,x,y"):
    return io.StringIO(header + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")


def test_ingest_sorts_points():
    ds = ingest_trajectories(csv_of([(1, 2, 0, 5, 5), (1, 0, 3, 1, 1), (1, 0, 1, 2, 2)]))
    assert ds.uids == ["1"]
    assert ds.trajectories["1"].points.tolist() == [[0, 1, 2, 2], [0, 3, 1, 1], [2, 0, 5, 5]]


def test_ingest_rejects_out_of_bounds_x():
    with pytest.raises(DataError, match=r"line 2: x=200 out of bounds"):
        ingest_trajectories(csv_of([(1, 0, 0, 200, 3)]))
    ingest_trajectories(csv_of([(1, 0, 0, 199, 199)]))


def test_ingest_rejects_duplicate_timestamp():
    with pytest.raises(DataError, match="line 3: duplicate timestamp"):
        ingest_trajectories(csv_of([(1, 0, 0, 1, 1), (1, 0, 0, 2, 2)]))


@pytest.mark.parametrize("rows,msg", [
    ([(1, 0, 0, 1)], "line 2: expected 5 fields"),
    ([(1, 0, "a", 1, 1)], "line 2: non-integer"),
    ([(1, 75, 0, 1, 1)], "d=75 out of bounds"),
    ([(1, 0, 48, 1, 1)], "t=48 out of bounds"),
])
def test_ingest_malformed(rows, msg):
    with pytest.raises(DataError, match=msg):
        ingest_trajectories(csv_of(rows))


def test_ingest_bad_header():
    with pytest.raises(DataError, match="line 1"):
        ingest_trajectories(csv_of([(1, 0, 0, 1, 1)], header="user,d,t,x,y"))


def test_trajectory_rejects_unordered_points():
    with pytest.raises(DataError):
        Trajectory("u", [[0, 2, 0, 0], [0, 1, 0, 0]])


def test_csv_round_trip():
    ds = synth_generate(desk_config(20, seed=3)).dataset
    again = ingest_trajectories(io.StringIO(trajectories_to_csv(ds)), ds.grid, ds.time, ds.poi)
    assert again == ds


@settings(max_examples=25, deadline=None)
@given(st.randoms(use_true_random=False))
def test_ingestion_order_independent(rnd):
    ds = synth_generate(desk_config(5, seed=1)).dataset
    lines = trajectories_to_csv(ds).splitlines()
    body = lines[1:]
    rnd.shuffle(body)
    again = ingest_trajectories(io.StringIO("\n".join([lines[0]] + body) + "\n"), ds.grid, ds.time)
    assert again == Dataset(ds.grid, ds.time, ds.trajectories)


def test_poi_round_trip_and_missing_cells_zero():
    grid = GridSpec(4, 3)
    poi = ingest_poi(io.StringIO("x,y,cat,count\n1,2,5,7\n1,2,5,1\n0,0,0,2\n"), grid, categories=10)
    assert poi.counts[1, 2, 5] == 8 and poi.counts[0, 0, 0] == 2
    assert poi.counts[3, 1].sum() == 0
    buf = io.StringIO()
    write_poi(poi, buf)
    buf.seek(0)
    assert ingest_poi(buf, grid, 10) == poi


def test_split_7_1_2_on_ten_users():
    ds = synth_generate(desk_config(10)).dataset
    tr, va, te = split_by_user(ds, (7, 1, 2), seed=0)
    assert (len(tr), len(va), len(te)) == (7, 1, 2)


def test_split_remainder_goes_to_train():
    ds = synth_generate(desk_config(13)).dataset
    sizes = [len(p) for p in split_by_user(ds, (7, 1, 2), seed=0)]
    # floor(9.1)=9, floor(1.3)=1, floor(2.6)=2, remainder 1 -> train
    assert sizes == [10, 1, 2]


def test_split_deterministic():
    ds = synth_generate(desk_config(30)).dataset
    a = [p.uids for p in split_by_user(ds, seed=5)]
    b = [p.uids for p in split_by_user(ds, seed=5)]
    c = [p.uids for p in split_by_user(ds, seed=6)]
    assert a == b and a != c


def test_split_degenerate_ratio_warns(caplog):
    ds = synth_generate(desk_config(6)).dataset
    with caplog.at_level(logging.WARNING):
        tr, va, te = split_by_user(ds, (1, 0, 0), seed=0)
    assert len(tr) == 6 and len(va) == 0 and len(te) == 0
    assert "empty" in caplog.text


def test_split_too_few_users():
    ds = synth_generate(desk_config(2)).dataset
    with pytest.raises(DataError):
        split_by_user(ds, (7, 1, 2))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(3, 60), seed=st.integers(0, 10_000),
       ratios=st.tuples(st.integers(1, 10), st.integers(1, 10), st.integers(1, 10)))
def test_split_partitions(n, seed, ratios):
    grid, time = GridSpec(3, 3), TimeSpec(2, 2)
    ds = Dataset(grid, time, {str(i): Trajectory(str(i), [[0, 0, 1, 1]]) for i in range(n)})
    parts = split_by_user(ds, ratios, seed)
    sets = [set(p.uids) for p in parts]
    assert set.union(*sets) == set(ds.uids)
    assert sum(len(s) for s in sets) == n


def test_validate_full_coverage():
    time = TimeSpec()
    pts = [[d, t, 3, 4] for d in range(time.num_days) for t in range(time.slots_per_day)]
    ds = Dataset(GridSpec(), time, {"u": Trajectory("u", pts)})
    rep = validate(ds)
    assert rep.users[0].sparsity == 1.0 and rep.users[0].num_points == 75 * 48
    assert "user=u points=3600 sparsity=1" in rep.to_text()


def test_validate_synthetic_ok():
    rep = validate(synth_generate(SynthConfig(num_users=12, seed=2)).dataset)
    assert rep.ok
    assert all(u.num_points > 0 for u in rep.users)
    assert "bounds_ok=true" in rep.to_text()


def test_dataset_rejects_out_of_bounds():
    with pytest.raises(DataError):
        Dataset(GridSpec(2, 2), TimeSpec(2, 2), {"u": Trajectory("u", [[0, 0, 2, 0]])})


def test_poi_table_nonnegative():
    with pytest.raises(DataError):
        PoiTable(-np.ones((2, 2, 3)))
