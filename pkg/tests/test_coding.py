import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikeattack.coding import (
    EVENT_DTYPE,
    EventStream,
    aggregate_events,
    binarize_frames,
    decode_events,
    encode_direct,
    encode_poisson,
    normalize_counts,
    read_events,
    write_events,
)
from spikeattack.tensor import FormatError, l0_norm


def stream(rows, h=4, w=4):
    t, x, y, p = (np.array(c) for c in zip(*rows))
    return EventStream.from_arrays(t, x, y, p, h, w)


@st.composite
def event_streams(draw):
    n = draw(st.integers(1, 60))
    t = np.sort(np.array(draw(st.lists(st.integers(0, 10_000), min_size=n, max_size=n))))
    x = draw(st.lists(st.integers(0, 5), min_size=n, max_size=n))
    y = draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    p = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    return EventStream.from_arrays(t, x, y, p, 4, 6)


def test_encode_direct():
    out = encode_direct(np.array([0.3]), 4)
    assert out.tolist() == [[0.3]] * 4
    img = np.random.default_rng(0).random((2, 3, 3))
    assert encode_direct(img, 1).shape == (1, 2, 3, 3)
    coded = encode_direct(img, 5)
    assert all(np.array_equal(s, img) for s in coded)
    # the float mean of equal values may differ in the last bits
    assert np.allclose(coded.mean(axis=0), img, rtol=4 * np.finfo(float).eps, atol=0)
    with pytest.raises(ValueError):
        encode_direct(np.array([1.2]), 2)


def test_encode_poisson():
    img = np.array([0.0, 1.0, 0.5])
    out = encode_poisson(img, 10_000, seed=3)
    assert not out[:, 0].any() and out[:, 1].all()
    assert abs(out[:, 2].mean() - 0.5) < 0.015
    half = np.full((1, 16, 16), 0.5)
    assert np.array_equal(encode_poisson(half, 4, 7), encode_poisson(half, 4, 7))
    assert not np.array_equal(encode_poisson(half, 4, 7), encode_poisson(half, 4, 8))
    with pytest.raises(ValueError):
        encode_poisson(np.array([-0.1]), 2, 0)


def test_event_stream_validation():
    with pytest.raises(ValueError):
        stream([(5, 0, 0, 1), (4, 0, 0, 1)])
    with pytest.raises(ValueError):
        stream([(0, 4, 0, 1)])
    with pytest.raises(ValueError):
        stream([(0, 0, 0, 2)])


def test_aggregate_examples():
    f = aggregate_events(stream([(0, 1, 2, 1), (1, 1, 2, 1), (100, 0, 0, 0)]), 4)
    assert f.shape == (4, 2, 4, 4)
    assert f[0, 1, 2, 1] == 2
    assert f[3, 0, 0, 0] == 1  # t_last lands in the last slice
    single = aggregate_events(stream([(7, 0, 0, 1)]), 3)
    assert single[2, 1, 0, 0] == 1 and single.sum() == 1
    with pytest.raises(ValueError):
        aggregate_events(EventStream(np.zeros(0, EVENT_DTYPE), 4, 4), 3)
    with pytest.raises(ValueError):
        aggregate_events(stream([(0, 0, 0, 0)]), 0)


@settings(max_examples=60)
@given(event_streams(), st.integers(1, 12), st.integers(0, 100_000))
def test_aggregate_conservation_and_shift_invariance(ev, T, dt):
    f = aggregate_events(ev, T)
    assert f.sum() == len(ev)
    assert np.all(f >= 0) and np.array_equal(f, np.round(f))
    assert np.array_equal(aggregate_events(ev.shifted(dt), T), f)
    b = binarize_frames(f)
    assert np.array_equal(binarize_frames(b), b)
    assert l0_norm(b) <= len(ev)


def test_binarize():
    assert binarize_frames(np.array([0, 1, 5])).tolist() == [0, 1, 1]


def test_normalize_counts():
    out, scale = normalize_counts(np.array([0.0, 2.0, 4.0]))
    assert scale == 4 and out.tolist() == [0, 0.5, 1]
    assert normalize_counts(np.zeros(3))[1] == 1.0


def test_event_file_round_trip(tmp_path):
    ev = stream([(0, 1, 2, 1), (3, 3, 0, 0), (3, 0, 3, 1)])
    path = tmp_path / "e.snne"
    write_events(ev, path)
    back = read_events(path)
    assert (back.height, back.width) == (4, 4)
    assert np.array_equal(back.events, ev.events)
    raw = path.read_bytes()
    assert raw[:4] == b"SNNE" and len(raw) == 16 + 3 * 10


def test_event_file_errors(tmp_path):
    ev = stream([(0, 1, 2, 1), (3, 3, 0, 0)])
    path = tmp_path / "e.snne"
    write_events(ev, path)
    raw = bytearray(path.read_bytes())
    bad = bytearray(raw)
    bad[16 + 10 + 8] = 2  # p of record 1
    with pytest.raises(FormatError) as err:
        decode_events(bytes(bad))
    assert err.value.offset == 16 + 10 + 8
    with pytest.raises(FormatError):
        decode_events(bytes(raw[:-3]))
    with pytest.raises(FormatError):
        decode_events(b"EVNT" + bytes(raw[4:]))
    back = bytearray(raw)
    back[16 + 10 : 16 + 14] = struct.pack("<I", 0)
    back[16:20] = struct.pack("<I", 9)
    with pytest.raises(FormatError) as err:
        decode_events(bytes(back))
    assert err.value.offset == 26
    empty = decode_events(struct.pack("<4sHHQ", b"SNNE", 4, 4, 0))
    assert len(empty) == 0
    with pytest.raises(ValueError):
        aggregate_events(empty, 2)
