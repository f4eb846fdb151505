import numpy as np
import pytest

from survext.dataset import (Arm, BlendError, DataError, Dataset, LongTermAnchor, Source,
                             SubjectRecord, blend, load_ipd, trim_tail, write_ipd)


def _csv(tmp_path, text, name="ipd.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _pairs(d):
    return [(r.time, r.event) for r in d]


def test_load_two_rows(tmp_path):
    d = load_ipd(_csv(tmp_path, "id,time,event,arm\ns1,12.0,1,SOC\ns2,48.0,0,SOC\n"))
    assert len(d) == 2
    assert d.n_events == 1
    assert [r.id for r in d] == ["s1", "s2"]
    assert all(r.entry_time == 0 and r.source is Source.RCT for r in d)


def test_negative_time_names_row(tmp_path):
    p = _csv(tmp_path, "id,time,event,arm\ns1,12.0,1,SOC\ns2,-1,1,SOC\n")
    with pytest.raises(DataError, match="row 2"):
        load_ipd(p)


def test_left_truncated_row(tmp_path):
    d = load_ipd(_csv(tmp_path, "id,time,event,arm,entry_time\ns1,60,1,SOC,48\n"))
    assert d.records[0].entry_time == 48.0 and d.records[0].time == 60.0


@pytest.mark.parametrize("body, msg", [
    ("id,time,arm\ns1,1,SOC\n", "missing column"),
    ("id,time,event,arm\ns1,abc,1,SOC\n", "non-numeric time"),
    ("id,time,event,arm\ns1,4,1,PLACEBO\n", "unknown arm"),
    ("id,time,event,arm\ns1,4,2,SOC\n", "event must be"),
    ("id,time,event,arm,entry_time\ns1,4,1,SOC,4\n", "must exceed"),
])
def test_load_errors(tmp_path, body, msg):
    with pytest.raises(DataError, match=msg):
        load_ipd(_csv(tmp_path, body))


def test_schema_mapping_and_comments(tmp_path):
    p = _csv(tmp_path, "# note\nID,T,D,GROUP\na,3,1,experimental\n")
    d = load_ipd(p, schema={"id": "ID", "time": "T", "event": "D", "arm": "GROUP"})
    assert d.records[0].arm is Arm.EXPERIMENTAL


def test_write_roundtrip(tmp_path):
    d = Dataset.from_arrays([1.5, 2.25], [True, False], [0.0, 1.0])
    p = tmp_path / "out.csv"
    write_ipd(d, p, ["header"])
    back = load_ipd(p)
    assert _pairs(back) == _pairs(d)
    assert list(back.entry) == [0.0, 1.0]


def test_record_invariants():
    with pytest.raises(DataError):
        SubjectRecord("x", 5.0, True, entry_time=5.0)
    with pytest.raises(DataError):
        SubjectRecord("x", float("nan"), True)


def test_trim_identity():
    d = Dataset.from_arrays([10, 20, 40, 50], [1, 1, 0, 1])
    assert trim_tail(d, 0.0) is d


def test_trim_hand_example():
    d = Dataset.from_arrays([10, 20, 40, 50], [1, 1, 0, 1])
    out = trim_tail(d, 0.1)
    assert _pairs(out) == [(10, True), (20, True), (40, False), (45, False)]


def test_trim_single_record():
    out = trim_tail(Dataset.from_arrays([48.0], [True]), 0.5)
    assert _pairs(out) == [(24.0, False)]


def test_trim_properties():
    rng = np.random.default_rng(1)
    t = rng.uniform(1, 60, 80)
    entry = np.where(rng.random(80) < 0.2, t * rng.uniform(0, 0.99, 80), 0.0)
    d = Dataset.from_arrays(t, rng.random(80) < 0.6, entry)
    once = trim_tail(d, 0.2)
    assert trim_tail(once, 0.2).records == trim_tail(once, 0.2).records
    assert once.n_events <= d.n_events
    t_cut = 0.8 * t.max()
    assert len(once) == int(np.sum(entry < t_cut))
    # idempotence of the operation for a fixed cut time
    assert trim_tail(d, 0.2).records == once.records


def test_trim_delete_flag():
    d = Dataset.from_arrays([10, 20, 40, 50], [1, 1, 0, 1])
    assert _pairs(trim_tail(d, 0.1, delete=True)) == [(10, True), (20, True), (40, False)]


def test_trim_bad_fraction():
    with pytest.raises(ValueError):
        trim_tail(Dataset.from_arrays([1.0], [True]), 1.0)


def test_blend_hand_example():
    rct = Dataset.from_arrays([40.0], [True])
    reg = Dataset.from_arrays([30.0, 90.0], [True, True], source=Source.REGISTRY, prefix="r")
    out = blend(rct, reg, 43.2)
    assert [(r.time, r.event, r.source, r.entry_time) for r in out] == [
        (40.0, True, Source.RCT, 0.0), (90.0, True, Source.REGISTRY, 43.2)]


def test_blend_join_zero_pools():
    rct = Dataset.from_arrays([40.0, 10.0], [True, False])
    reg = Dataset.from_arrays([30.0, 90.0], [True, True], source=Source.REGISTRY)
    out = blend(rct, reg, 0.0)
    assert len(out) == 4 and np.all(out.entry == 0.0)


def test_blend_degenerate_cases():
    rct = Dataset.from_arrays([40.0], [True])
    reg = Dataset.from_arrays([10.0, 20.0], [True, True], source=Source.REGISTRY)
    assert blend(rct, reg, 25.0).records == rct.records
    assert blend(rct, Dataset(()), 7.0).records == rct.records
    with pytest.raises(BlendError):
        blend(Dataset(()), Dataset(()), 1.0)
    with pytest.raises(BlendError):
        blend(Dataset(()), reg, 25.0)


def test_blend_output_valid():
    rng = np.random.default_rng(2)
    rct = Dataset.from_arrays(rng.uniform(1, 48, 30), rng.random(30) < 0.7)
    reg = Dataset.from_arrays(rng.uniform(1, 100, 30), rng.random(30) < 0.9,
                              source=Source.REGISTRY)
    out = blend(rct, reg, 48.0)
    assert np.all(out.time > out.entry)


@pytest.mark.parametrize("kw", [dict(t_obs=0, s_obs=.3, var_obs=.01),
                                dict(t_obs=80, s_obs=1.0, var_obs=.01),
                                dict(t_obs=80, s_obs=.3, var_obs=0),
                                dict(t_obs=80, s_obs=.3, var_obs=.01, alpha=2.5)])
def test_anchor_invariants(kw):
    with pytest.raises(ValueError):
        LongTermAnchor(**kw)


def test_anchor_precision():
    assert LongTermAnchor(80, 0.35, 0.01, 2.0).precision == pytest.approx(1e4, rel=1e-14)
