import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evalign import EventStream, OutOfBounds, ParseError
from evalign import io as evio


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_bytes(data if isinstance(data, bytes) else data.encode())
    return p


def test_text_line_parses(tmp_path):
    s = evio.read_events(write(tmp_path, "a.evt", "evt1 10 10\n1000,5,7,1\n"))
    assert len(s) == 1 and s[0].t == 1000 and (s[0].x, s[0].y, s[0].p) == (5, 7, 1)


def test_text_zero_polarity_is_negative(tmp_path):
    s = evio.read_events(write(tmp_path, "a.evt", "evt1 10 10\n1,0,0,0\n2,0,0,-1\n"))
    assert s.p.tolist() == [-1, -1]


@pytest.mark.parametrize("body, line", [
    ("evt2 10 10\n", 1),
    ("evt1 10 10\n1,2,3\n", 2),
    ("evt1 10 10\n1,2,3,1\nx,2,3,1\n", 3),
    ("evt1 10 10\n1,2,3,5\n", 2),
    ("evt1 10 10\n5,2,3,1\n4,2,3,1\n", 3),
])
def test_text_parse_errors_carry_line(tmp_path, body, line):
    with pytest.raises(ParseError) as err:
        evio.read_events(write(tmp_path, "bad.evt", body))
    assert err.value.line == line


def test_text_out_of_bounds(tmp_path):
    with pytest.raises(OutOfBounds):
        evio.read_events(write(tmp_path, "oob.evt", "evt1 4 4\n1,4,0,1\n"))


def test_binary_layout(tmp_path):
    s = EventStream([7, 9], [1, 3], [2, 0], [1, -1], 5, 4)
    p = tmp_path / "s.evb"
    evio.write_events(s, p)
    data = p.read_bytes()
    assert len(data) == 16 + 2 * 16
    assert data[:4] == b"EVB1"
    assert struct.unpack_from("<HHQ", data, 4) == (5, 4, 2)
    assert struct.unpack_from("<QHHb3s", data, 32) == (9, 3, 0, -1, b"\0\0\0")


def test_binary_errors(tmp_path):
    s = EventStream([7], [1], [2], [1], 5, 4)
    p = tmp_path / "s.evb"
    evio.write_events(s, p)
    good = p.read_bytes()
    with pytest.raises(ParseError) as err:
        evio.read_events(write(tmp_path, "t.evb", good[:-1]))
    assert err.value.offset is not None
    with pytest.raises(ParseError):
        evio.read_events(write(tmp_path, "m.evb", b"XXXX" + good[4:]))
    bad_p = bytearray(good)
    bad_p[16 + 12] = 3
    with pytest.raises(ParseError) as err:
        evio.read_events(write(tmp_path, "p.evb", bytes(bad_p)))
    assert err.value.offset == 28
    oob = bytearray(good)
    struct.pack_into("<H", oob, 16 + 8, 9)
    with pytest.raises(OutOfBounds):
        evio.read_events(write(tmp_path, "o.evb", bytes(oob)))


streams = st.integers(0, 300).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 2**63), min_size=n, max_size=n).map(sorted),
    st.lists(st.integers(0, 639), min_size=n, max_size=n),
    st.lists(st.integers(0, 479), min_size=n, max_size=n),
    st.lists(st.sampled_from([-1, 1]), min_size=n, max_size=n),
))


@settings(max_examples=40, deadline=None)
@given(cols=streams, fmt=st.sampled_from(["evt", "evb"]))
def test_round_trip_identity(tmp_path_factory, cols, fmt):
    t, x, y, p = cols
    s = EventStream(t, x, y, p, 640, 480)
    path = tmp_path_factory.mktemp("rt") / f"s.{fmt}"
    evio.write_events(s, path)
    back = evio.read_events(path)
    assert back == s
    again = path.with_name("again." + fmt)
    evio.write_events(back, again)
    assert again.read_bytes() == path.read_bytes()


def test_flow_round_trip_bit_exact(tmp_path, rng):
    control = rng.normal(size=(2, 3, 5)).astype(np.float32).astype(np.float64)
    p = tmp_path / "f.flo32"
    evio.write_flow(p, control, 30, 50)
    assert p.read_bytes().startswith(b"FLO1 3 5 30 50\n")
    back, h, w = evio.read_flow(p)
    assert (h, w) == (30, 50) and np.array_equal(back, control)
    q = tmp_path / "g.flo32"
    evio.write_flow(q, back, h, w)
    assert q.read_bytes() == p.read_bytes()
    # u plane precedes v plane, row-major
    raw = np.frombuffer(p.read_bytes()[len(b"FLO1 3 5 30 50\n"):], "<f4")
    assert np.array_equal(raw[:15].reshape(3, 5), control[0].astype(np.float32))


def test_flow_truncated(tmp_path):
    with pytest.raises(ParseError):
        evio.read_flow(write(tmp_path, "f.flo32", b"FLO1 2 2 4 4\n" + b"\0" * 12))


def test_tsr_round_trip(tmp_path, rng):
    tensors = {"a": rng.normal(size=(2, 3)), "b.c": rng.normal(size=(4,)), "s": np.array([1.5])}
    p = tmp_path / "p.tsr"
    evio.write_tsr(p, tensors)
    back = evio.read_tsr(p)
    assert list(back) == list(tensors)
    for k in tensors:
        assert np.array_equal(back[k], tensors[k].astype(np.float32))
    q = tmp_path / "q.tsr"
    evio.write_tsr(q, back)
    assert q.read_bytes() == p.read_bytes()
    data = p.read_bytes()
    (mlen,) = struct.unpack_from("<I", data, 4)
    manifest = json.loads(data[8:8 + mlen])
    assert {"name", "shape", "dtype", "offset"} <= set(manifest[0]) and manifest[1]["offset"] == 24


def test_f32_and_pgm(tmp_path, rng):
    img = rng.normal(size=(6, 7))
    evio.write_f32(tmp_path / "i.f32", img, t_ref=1)
    back, header = evio.read_f32(tmp_path / "i.f32")
    assert header["shape"] == [6, 7] and header["t_ref"] == 1
    assert np.array_equal(back, img.astype(np.float32))
    side = evio.write_pgm16(tmp_path / "i.pgm", img)
    q = evio.read_pgm16(tmp_path / "i.pgm")
    assert q.min() == 0 and q.max() == 65535
    recon = side["min"] + q / 65535.0 * (side["max"] - side["min"])
    np.testing.assert_allclose(recon, img, atol=(img.max() - img.min()) / 65535)
    assert json.loads((tmp_path / "i.pgm.json").read_text()) == side
