import struct

import numpy as np
import pytest

from sargan.nets import build_colorization_net, build_despeckling_net
from sargan.persist import (
    MAGIC,
    FormatError,
    dump_arrays,
    load_network,
    load_network_file,
    network_arrays,
    parse_arrays,
    save_network,
)


def test_layout_by_hand():
    blob = dump_arrays({"w": np.array([[1.0, 2.0]])})
    expected = (MAGIC + struct.pack("<Q", 1) + struct.pack("<I", 1) + b"w" + struct.pack("<I", 2)
                + struct.pack("<2Q", 1, 2) + struct.pack("<2d", 1.0, 2.0) + struct.pack("<Q", 0))
    assert blob == expected


def test_round_trip_with_trailer():
    rng = np.random.default_rng(0)
    arrays = {"a": rng.normal(size=(2, 3, 4)), "scalar": np.array(3.5), "név": np.arange(5.0)}
    arrays_back, meta = parse_arrays(dump_arrays(arrays, {"step": 3, "x": [1, 2]}))
    assert meta == {"step": 3, "x": [1, 2]}
    assert list(arrays_back) == list(arrays)
    for k in arrays:
        assert arrays_back[k].shape == arrays[k].shape
        assert arrays_back[k].tobytes() == arrays[k].tobytes()


def test_bad_magic_and_truncation():
    with pytest.raises(FormatError):
        parse_arrays(b"NOTSARGAN")
    blob = dump_arrays({"w": np.ones(4)})
    with pytest.raises(FormatError):
        parse_arrays(blob[:-12])


def test_network_round_trip(tmp_path):
    net = build_despeckling_net(seed=3, width=8, depth=3)
    net.state.stats["conv2.bn"].mean[:] = 0.25
    path = tmp_path / "gd.sgw"
    save_network(path, net)
    other = build_despeckling_net(seed=9, width=8, depth=3)
    load_network_file(path, other)
    for k, v in network_arrays(net).items():
        assert np.array_equal(v, network_arrays(other)[k])
    x = np.random.default_rng(1).random((1, 1, 8, 8))
    assert np.array_equal(net(x, "eval").data, other(x, "eval").data)


def test_mismatched_network_rejected():
    arrays = network_arrays(build_despeckling_net(width=8, depth=3))
    with pytest.raises(FormatError, match="shape"):
        load_network(build_despeckling_net(width=16, depth=3), arrays)
    with pytest.raises(FormatError, match="missing"):
        load_network(build_colorization_net(width=8, depth=3), arrays)
