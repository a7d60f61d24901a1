import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sgldvr.dynamics import DecaySchedule, SgldVrConfig, run
from sgldvr.errors import TraceParseError
from sgldvr.objectives import make_quadratic
from sgldvr.trace import RunTrace, fmt, read_trace, sidecar_path, summarize, write_trace


def _trace(n, d=None, seed=0):
    rng = np.random.default_rng(seed)
    return RunTrace(
        t=np.arange(n, dtype=np.int64) * 3,
        f=rng.standard_normal(n) * 10.0 ** rng.integers(-300, 300, n),
        grad_norm=np.abs(rng.standard_normal(n)),
        iterates=None if d is None else rng.standard_normal((n, d)),
        config={"variant": "sgld-vr"},
        seed=seed,
        objective={"id": "quadratic", "d": 2},
        provenance="test",
        constants={"alpha": 0.25},
    )


def test_roundtrip_zero_horizon(tmp_path):
    obj, _ = make_quadratic(2, 1.0)
    tr = run(obj, SgldVrConfig(1, 1, 0, DecaySchedule(0.1)), [1.0, 2.0], 7)
    write_trace(tr, tmp_path / "t.csv")
    back = read_trace(tmp_path / "t.csv")
    assert back.equals(tr) and len(back) == 1


def test_roundtrip_large(tmp_path):
    tr = _trace(100_000, seed=1)
    write_trace(tr, tmp_path / "big.csv")
    back = read_trace(tmp_path / "big.csv")
    assert back.equals(tr)
    assert np.array_equal(back.f.view(np.int64), tr.f.view(np.int64))


def test_roundtrip_with_iterates(tmp_path):
    tr = _trace(50, d=3, seed=2)
    write_trace(tr, tmp_path / "x.csv")
    back = read_trace(tmp_path / "x.csv")
    assert back.equals(tr)
    assert sidecar_path(tmp_path / "x.csv").exists()


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_is_lossless(v):
    assert float(fmt(v)) == v


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e300, 1e300)))
def test_roundtrip_property(tmp_path_factory, f):
    path = tmp_path_factory.mktemp("p") / "p.csv"
    tr = RunTrace(t=np.arange(f.size), f=f, grad_norm=np.abs(f))
    write_trace(tr, path)
    assert read_trace(path).equals(tr)


def _write(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    return p


def test_non_monotone_t(tmp_path):
    p = _write(tmp_path, "t,f,grad_norm\n0,1,1\n5,1,1\n5,1,1\n")
    with pytest.raises(TraceParseError) as exc:
        read_trace(p)
    assert exc.value.line == 4 and exc.value.column == 1


def test_bad_number_location(tmp_path):
    p = _write(tmp_path, "t,f,grad_norm\n0,1.0,abc\n")
    with pytest.raises(TraceParseError) as exc:
        read_trace(p)
    assert (exc.value.line, exc.value.column) == (2, 7)
    assert "bad.csv:2:7" in str(exc.value)


@pytest.mark.parametrize(
    "text",
    ["", "a,b,c\n", "t,f,grad_norm\n0,1\n", "t,f,grad_norm\n0,nan,1\n", "t,f,grad_norm\nx,1,1\n", "t,f,grad_norm,y\n0,1,1,1\n"],
)
def test_malformed_files(tmp_path, text):
    with pytest.raises(TraceParseError):
        read_trace(_write(tmp_path, text))


def test_bad_sidecar(tmp_path):
    p = _write(tmp_path, "t,f,grad_norm\n0,1,1\n")
    sidecar_path(p).write_text("{\n  oops\n}")
    with pytest.raises(TraceParseError) as exc:
        read_trace(p)
    assert exc.value.line == 2


def test_construction_rejects_non_finite():
    with pytest.raises(ValueError):
        RunTrace(t=np.arange(2), f=np.array([1.0, np.inf]), grad_norm=np.ones(2))
    with pytest.raises(ValueError):
        RunTrace(t=np.array([0, 0]), f=np.ones(2), grad_norm=np.ones(2))


def test_summary_constant():
    tr = RunTrace(t=np.arange(5), f=np.full(5, 2.5), grad_norm=np.ones(5))
    s = summarize(tr, [3.0, 1.0])
    assert s["min_f"] == s["median_f"] == 2.5
    assert s["first_passage"] == {"3.0": 0, "1.0": None}
    assert not s["stride_limited"]


def test_summary_passage_and_stride_flag():
    tr = RunTrace(t=np.array([0, 10, 20]), f=np.array([3.0, 2.0, 1.0]), grad_norm=np.ones(3))
    s = summarize(tr, [2.0])
    assert s["first_passage"]["2.0"] == 10 and s["stride_limited"]


def test_summary_empty():
    with pytest.raises(ValueError):
        summarize(RunTrace(t=np.array([], dtype=int), f=np.array([]), grad_norm=np.array([])))
