import json

import numpy as np
import pytest

from nirom.errors import ProvenanceError, ShapeError
from nirom.fom import Trajectory
from nirom.pod import compute_pod
from nirom.sampling import ParameterSignal, polynomial_signal
from nirom.storage import (Manifest, file_digest, load_basis, load_net, load_trajectory,
                           read_container, read_csv, save_basis, save_net, save_trajectory,
                           write_container, write_csv, write_spectrum)
from nirom.surrogate import Normalizer, TrainingConfig, forward_rknn, make_net


def test_container_layout(tmp_path):
    path = tmp_path / "a.bin"
    write_container(path, "thing", {"x": np.arange(6.0).reshape(2, 3)}, {"note": "hi"})
    blob = path.read_bytes()
    assert blob[:8] == b"NIROMBIN"
    assert int.from_bytes(blob[8:12], "little") == 1
    hlen = int.from_bytes(blob[12:16], "little")
    header = json.loads(blob[16:16 + hlen])
    assert header["arrays"] == [{"name": "x", "offset": 0, "shape": [2, 3]}]
    payload = np.frombuffer(blob[16 + hlen:], dtype="<f8")
    assert np.array_equal(payload, np.arange(6.0))
    kind, arrays, meta = read_container(path)
    assert kind == "thing" and meta == {"note": "hi"}


def test_corruption_detected(tmp_path):
    path = tmp_path / "a.bin"
    write_container(path, "thing", {"x": np.ones(4)})
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ProvenanceError):
        read_container(path)
    path.write_bytes(b"garbage!" + bytes(20))
    with pytest.raises(ProvenanceError):
        read_container(path)


def test_wrong_kind(tmp_path):
    path = tmp_path / "a.bin"
    write_container(path, "thing", {"x": np.ones(1)})
    with pytest.raises(ProvenanceError):
        read_container(path, "basis")


def test_trajectory_round_trip(tmp_path, rng):
    traj = Trajectory(np.linspace(0, 10, 11), rng.normal(size=(4, 11)), "abc")
    sig = ParameterSignal("rectified_sine", (1.0, 2.0), omega=0.3, floor=(0.5, 0.5),
                          modulated=(False, True))
    save_trajectory(tmp_path / "t.bin", traj, sig)
    back, sig2, meta = load_trajectory(tmp_path / "t.bin")
    assert back.states.tobytes() == traj.states.tobytes()
    assert sig2 == sig
    assert meta["k"] == 10


def test_basis_round_trip_bit_exact(tmp_path, rng):
    basis = compute_pod(rng.normal(size=(12, 30)), 4, center=True)
    save_basis(tmp_path / "b.bin", basis)
    back, _ = load_basis(tmp_path / "b.bin")
    assert back.basis.tobytes() == basis.basis.tobytes()
    assert back.mean.tobytes() == basis.mean.tobytes()
    assert np.allclose(back.basis.T @ back.basis, np.eye(4), atol=1e-10)


def test_net_round_trip(tmp_path):
    nz = Normalizer(np.array([1.0, 2.0]), np.array([0.5, 3.0]), np.zeros(2), np.ones(2),
                    np.array([0.1, 0.2]), 5.0)
    net = make_net("rknn", nz, 5.0, TrainingConfig(seed=11, activation="leaky_relu"))
    save_net(tmp_path / "n.bin", net)
    back, meta = load_net(tmp_path / "n.bin")
    assert meta["seed"] == 11
    assert meta["layer_sizes"] == [4, 32, 32, 2]
    y, mu = np.array([0.3, 0.4]), np.array([1.0, -1.0])
    assert forward_rknn(back, y, mu).tobytes() == forward_rknn(net, y, mu).tobytes()


def test_same_content_same_bytes(tmp_path, rng):
    basis = compute_pod(rng.normal(size=(6, 9)), 2)
    save_basis(tmp_path / "a.bin", basis)
    save_basis(tmp_path / "b.bin", basis)
    assert file_digest(tmp_path / "a.bin") == file_digest(tmp_path / "b.bin")


def test_csv_round_trip(tmp_path):
    rows = [[1, 0.1, "x"], [2, 1 / 3, "y"], [3, float("nan"), "z"]]
    write_csv(tmp_path / "r.csv", ["i", "v", "s"], rows)
    header, back = read_csv(tmp_path / "r.csv")
    assert header == ["i", "v", "s"]
    assert back[1][1] == 1 / 3
    assert np.isnan(back[2][1])
    with pytest.raises(ShapeError):
        write_csv(tmp_path / "r.csv", ["a"], [[1, 2]])


def test_spectrum_file(tmp_path):
    write_spectrum(tmp_path / "s.csv", [3.0, 2.0, 0.5])
    header, rows = read_csv(tmp_path / "s.csv")
    assert header == ["index", "sigma"]
    assert rows == [[1, 3.0], [2, 2.0], [3, 0.5]]


def test_manifest(tmp_path):
    a = tmp_path / "a.txt"
    b = tmp_path / "sub" / "b.txt"
    b.parent.mkdir()
    a.write_text("one")
    b.write_text("two")
    m = Manifest(tmp_path, "cfg")
    m.add(a, "input")
    m.add(b, "output", [a])
    m.save()
    m2 = Manifest.load(tmp_path)
    assert m2.verify(b)["parents"] == ["a.txt"]
    b.write_text("tampered")
    with pytest.raises(ProvenanceError):
        m2.verify(b)
    with pytest.raises(ProvenanceError):
        m2.verify(tmp_path / "unknown.txt")


def test_polynomial_signal_in_metadata(tmp_path):
    traj = Trajectory(np.linspace(0, 1, 3), np.ones((2, 3)), "")
    sig = polynomial_signal([[300.0], [0.15, -0.0002]], test="dynamic")
    save_trajectory(tmp_path / "t.bin", traj, sig)
    assert load_trajectory(tmp_path / "t.bin")[1] == sig
