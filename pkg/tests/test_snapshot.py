import struct

import numpy as np
import pytest

from gsnn.config import Config
from gsnn.kg import Triple
from gsnn.network import Network
from gsnn.protocols import EncodingProtocol, encode_triple
from gsnn.snapshot import (MAGIC, SnapshotError, export_json, from_bytes, import_json,
                           load_snapshot, save_snapshot, snapshot_info, to_bytes)

TRIPLE = Triple("A", "R", "B")


@pytest.fixture(scope="module")
def trained():
    cfg = Config().replace(n_neurons=400, seed=5)
    net = Network.from_triples(cfg, [TRIPLE], extra_entities=["C"])
    encode_triple(net, *TRIPLE, EncodingProtocol.from_config(cfg))
    # leave the network mid-activity so the state section matters
    net.drive(["A"], 7, "stdp")
    return net


def continue_run(net, ms=100):
    raster = net.drive(["A", "R"], ms, "stdp")
    return raster.events(), net.synapses.digest()


def test_round_trip_preserves_everything(tmp_path, trained):
    path = save_snapshot(trained, tmp_path / "s.gsnn")
    back = load_snapshot(path)
    assert back.synapses.digest() == trained.synapses.digest()
    assert back.cfg == trained.cfg
    assert back.stim_counter == trained.stim_counter
    assert np.array_equal(back.state.v, trained.state.v)
    assert back.state.step == trained.state.step
    for e in trained.registry:
        assert np.array_equal(back.registry[e.label].neuron_ids, e.neuron_ids)


def test_continued_run_matches_uninterrupted(trained):
    data = to_bytes(trained)
    a = from_bytes(data)
    b = from_bytes(data)
    (ta, ia), da = continue_run(a)
    (tb, ib), db = continue_run(b)
    assert len(ia) > 0
    assert np.array_equal(ta, tb) and np.array_equal(ia, ib) and da == db


def test_snapshot_of_live_network_continues_identically(trained):
    live = from_bytes(to_bytes(trained))
    snap = to_bytes(live)
    (t1, i1), d1 = continue_run(live)
    (t2, i2), d2 = continue_run(from_bytes(snap))
    assert np.array_equal(t1, t2) and np.array_equal(i1, i2) and d1 == d2


def test_json_export_is_lossless(tmp_path, trained):
    back = import_json(export_json(trained, tmp_path / "s.json"))
    assert back.synapses.digest() == trained.synapses.digest()
    assert to_bytes(back) == to_bytes(trained)


def test_info(tmp_path, trained):
    info = snapshot_info(save_snapshot(trained, tmp_path / "s.gsnn"))
    assert info["version"] == 1 and info["engrams"] == 4
    assert info["synapses"] == len(trained.synapses)


def test_truncated_file_names_section(trained):
    data = to_bytes(trained)
    for cut in (3, 10, 20, len(data) // 2, len(data) - 1):
        with pytest.raises(SnapshotError):
            from_bytes(data[:cut])
    with pytest.raises(SnapshotError) as err:
        from_bytes(data[:len(data) - 1])
    assert err.value.section == "meta"


def test_bad_magic_and_version(trained):
    data = to_bytes(trained)
    with pytest.raises(SnapshotError) as err:
        from_bytes(b"XXXX" + data[4:])
    assert err.value.section == "header"
    bumped = MAGIC + struct.pack("<I", 99) + data[8:]
    with pytest.raises(SnapshotError, match="version"):
        from_bytes(bumped)


def test_corrupted_payload_fails_checksum(trained):
    data = bytearray(to_bytes(trained))
    data[-5] ^= 0xFF
    with pytest.raises(SnapshotError, match="checksum"):
        from_bytes(bytes(data))


def test_trailing_garbage_rejected(trained):
    with pytest.raises(SnapshotError):
        from_bytes(to_bytes(trained) + b"\x00")


def test_save_is_atomic_and_leaves_no_temp(tmp_path, trained):
    target = tmp_path / "s.gsnn"
    target.write_bytes(b"old")
    save_snapshot(trained, target)
    assert target.read_bytes()[:4] == MAGIC
    assert [p.name for p in tmp_path.iterdir()] == ["s.gsnn"]
