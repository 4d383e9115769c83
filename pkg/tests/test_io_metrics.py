import numpy as np
import pytest

from spadblur import io
from spadblur.changepoint import detect_tensor
from spadblur.core import FluxImage, PhotonFrameTensor, QisFrameTensor, SensorConfig
from spadblur.metrics import SNR_CAP_DB, annotation_error, snr
from spadblur.simulate import sample_photon_frames
from spadblur.transforms import EuclideanTransform


@pytest.fixture
def tensor():
    return sample_photon_frames([np.full((3, 5), 4e6)], 40, SensorConfig(), 2)


def test_spf_round_trip_is_bit_identical(tmp_path, tensor):
    p = tmp_path / "a.spf"
    io.write_tensor(p, tensor)
    back = io.read_tensor(p)
    assert isinstance(back, PhotonFrameTensor) and back.config == tensor.config
    np.testing.assert_array_equal(back.data, tensor.data)
    io.write_tensor(tmp_path / "b.spf", back)
    assert (tmp_path / "b.spf").read_bytes() == p.read_bytes()


def test_sqf_round_trip(tmp_path):
    q = QisFrameTensor(np.random.default_rng(0).integers(0, 2, (7, 2, 3)), SensorConfig(100, 1e-9, 0.5))
    io.write_tensor(tmp_path / "q.sqf", q)
    back = io.read_tensor(tmp_path / "q.sqf")
    assert isinstance(back, QisFrameTensor) and back.config == q.config
    np.testing.assert_array_equal(back.data, q.data)


def test_header_layout(tmp_path, tensor):
    io.write_tensor(tmp_path / "a.spf", tensor)
    raw = (tmp_path / "a.spf").read_bytes()
    assert raw[:4] == b"SPF1"
    w, h, n, bins = np.frombuffer(raw[4:20], "<u4")
    assert (w, h, n, bins) == (5, 3, 40, 8000)
    assert len(raw) == 36 + 2 * 5 * 3 * 40


def test_corrupt_files_are_rejected(tmp_path, tensor):
    p = tmp_path / "a.spf"
    io.write_tensor(p, tensor)
    raw = p.read_bytes()
    (tmp_path / "short.spf").write_bytes(raw[:-2])
    (tmp_path / "magic.spf").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "tiny.spf").write_bytes(b"SPF1")
    for name in ("short.spf", "magic.spf", "tiny.spf"):
        with pytest.raises(io.FormatError):
            io.read_tensor(tmp_path / name)
    bad = bytearray(raw)
    bad[36:38] = np.uint16(9000).tobytes()  # bin index beyond the sentinel
    (tmp_path / "range.spf").write_bytes(bytes(bad))
    with pytest.raises(io.FormatError):
        io.read_tensor(tmp_path / "range.spf")


@pytest.mark.parametrize("name,bits", [("x.pgm", 16), ("x.pgm", 8), ("x.png", 16), ("x.png", 8)])
def test_image_round_trip_through_sidecar(tmp_path, name, bits):
    img = np.linspace(1e5, 3e7, 48).reshape(6, 8)
    meta = io.write_image(tmp_path / name, img, bits=bits)
    assert meta["bits"] == bits
    back = io.read_image(tmp_path / name)
    step = (img.max() - img.min()) / ((1 << bits) - 1)
    np.testing.assert_allclose(back, img, atol=step)


def test_csv_image_and_tables(tmp_path):
    img = np.array([[1.5, 2.25], [3.0, 4.125]])
    io.write_flux_csv(tmp_path / "i.csv", FluxImage(img))
    np.testing.assert_array_equal(io.read_image(tmp_path / "i.csv"), img)
    rows = [{"a": 1, "b": 0.1 + 0.2, "c": "x"}]
    io.write_table(tmp_path / "t.csv", rows)
    assert (tmp_path / "t.csv").read_text() == "a,b,c\n1,0.3,x\n"
    assert io.read_table(tmp_path / "t.csv") == [{"a": "1", "b": "0.3", "c": "x"}]


def test_config_files(tmp_path):
    io.write_config(tmp_path / "c.txt", {"lambda": 6, "eps": 7.5, "algo": "pelt", "grid": [1, 2]})
    (tmp_path / "c.txt").write_text((tmp_path / "c.txt").read_text() + "# comment\n\nqis = true\n")
    cfg = io.read_config(tmp_path / "c.txt")
    assert cfg == {"lambda": 6, "eps": 7.5, "algo": "pelt", "grid": [1, 2], "qis": True}
    (tmp_path / "bad.txt").write_text("no equals sign\n")
    with pytest.raises(io.FormatError):
        io.read_config(tmp_path / "bad.txt")


def test_changepoint_file_round_trip(tmp_path, tensor):
    cps = detect_tensor(tensor, 2.0, method="bottomup")
    io.save_changepoints(tmp_path / "c.npz", cps)
    back = io.load_changepoints(tmp_path / "c.npz")
    np.testing.assert_array_equal(back.frame_bounds, cps.frame_bounds)
    assert (back.height, back.width, back.n_frames, back.method) == (3, 5, 40, "bottomup")
    (tmp_path / "x.npz").write_bytes(b"junk")
    with pytest.raises(io.FormatError):
        io.load_changepoints(tmp_path / "x.npz")


def test_trajectory_csv(tmp_path):
    io.write_trajectory_csv(tmp_path / "t.csv", [EuclideanTransform(np.deg2rad(2.0), 1.0, -1.0)])
    row = io.read_table(tmp_path / "t.csv")[0]
    assert float(row["theta_deg"]) == pytest.approx(2.0)


def test_snr_examples():
    gt = np.full((4, 4), 10.0)
    assert snr(gt, gt) == SNR_CAP_DB
    assert snr(gt + 1.0, gt) == pytest.approx(20.0)
    mask = np.zeros((4, 4), bool)
    mask[0] = True
    est = gt.copy()
    est[1:] += 100
    assert snr(est, gt, mask) == SNR_CAP_DB
    with pytest.raises(ValueError):
        snr(gt, np.zeros((4, 4)))
    with pytest.raises(ValueError):
        snr(gt, np.ones((3, 3)))


def test_annotation_error():
    assert annotation_error(np.array([3, 9]), 2) == 0
    assert annotation_error(np.array([]), 2) == 2
    assert annotation_error(5, 2) == 3
