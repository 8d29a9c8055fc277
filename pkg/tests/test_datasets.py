"""On-disk format: round trips, corruption handling, rendering.

The golden fixture under tests/golden/dataset_v1 was written by hand
with struct.pack, independent of the writer, and pins the documented
byte layout: little-endian float32, row-major, x fastest.
"""

import json
import struct
from pathlib import Path

import numpy as np
import pytest

from psrecon.datasets import (
    open_dataset,
    read_dataset,
    read_truth,
    render_map,
    write_dataset,
    write_truth,
)
from psrecon.errors import CorruptDatasetError, FormatVersionError, UsageError
from psrecon.phantom import DefectMap, MeasurementSet, ScanPlan
from psrecon.thermal import ExcitationTemporal, Grid2D, PlateSpec

GOLDEN = Path(__file__).parent / "golden" / "dataset_v1"


def make_set(plate, excitation, seed=0, with_series=False):
    g = Grid2D(n_x=6, n_y=4, dx=2.5e-4, dy=2.5e-4)
    rng = np.random.default_rng(seed)
    frames = rng.random((3, 4, 6)).astype(np.float32)
    plan = ScanPlan(rng.random((3, 2)) * 1e-4, 1e-3, 3e-4)
    series = rng.random((3, 5, 4, 6)).astype(np.float32) if with_series else None
    times = (np.arange(5) + 1) / 100.0 if with_series else None
    return MeasurementSet(
        grid=g, frames=frames, eval_time=0.1, plan=plan, plate=plate,
        excitation=excitation, noise_sigma=1e-4, seed=seed,
        series=series, frame_times=times,
    )


class TestRoundTrip:
    def test_bitwise_frames(self, plate, excitation, tmp_path):
        data = make_set(plate, excitation, seed=1)
        write_dataset(data, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds")
        assert back.frames.tobytes() == data.frames.tobytes()
        assert back.eval_time == data.eval_time
        assert back.noise_sigma == data.noise_sigma
        assert back.seed == data.seed
        assert np.allclose(back.plan.positions, data.plan.positions)
        assert back.grid == data.grid

    def test_bitwise_series(self, plate, excitation, tmp_path):
        data = make_set(plate, excitation, seed=2, with_series=True)
        write_dataset(data, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds")
        assert back.series.tobytes() == data.series.tobytes()
        assert np.allclose(back.frame_times, data.frame_times)

    def test_streamed_frame_matches(self, plate, excitation, tmp_path):
        data = make_set(plate, excitation, seed=3)
        write_dataset(data, tmp_path / "ds")
        reader = open_dataset(tmp_path / "ds")
        assert np.array_equal(reader.frame(1), data.frames[1])
        with pytest.raises(IndexError):
            reader.frame(3)

    def test_rewrite_same_directory(self, plate, excitation, tmp_path):
        data = make_set(plate, excitation, seed=4)
        write_dataset(data, tmp_path / "ds")
        write_dataset(data, tmp_path / "ds")  # lock released after first
        assert read_dataset(tmp_path / "ds").frames.tobytes() == data.frames.tobytes()


class TestGoldenLayout:
    def test_reader_decodes_handmade_bytes(self):
        reader = open_dataset(GOLDEN)
        assert reader.n_m == 2
        assert reader.grid.shape == (3, 4)
        # frame[m][iy][ix] = m*100 + iy*10 + ix by construction
        expected = np.array(
            [[[m * 100 + iy * 10 + ix for ix in range(4)] for iy in range(3)]
             for m in range(2)],
            dtype=np.float32,
        )
        for m in range(2):
            assert np.array_equal(reader.frame(m), expected[m])

    def test_payload_is_little_endian_row_major(self):
        blob = (GOLDEN / "frame_0001.bin").read_bytes()
        assert len(blob) == 4 * 12
        # second value of the second row: iy=1, ix=1 -> 111.0
        assert struct.unpack("<f", blob[(1 * 4 + 1) * 4 : (1 * 4 + 2) * 4])[0] == 111.0

    def test_writer_reproduces_golden_payload(self, plate, excitation, tmp_path):
        """The writer must emit exactly the bytes the handmade fixture
        pins down."""
        g = Grid2D(n_x=4, n_y=3, dx=0.00025, dy=0.00025)
        frames = np.array(
            [[[m * 100 + iy * 10 + ix for ix in range(4)] for iy in range(3)]
             for m in range(2)],
            dtype=np.float32,
        )
        data = MeasurementSet(
            grid=g, frames=frames, eval_time=0.1,
            plan=ScanPlan(np.array([[0.0005, 0.0005], [0.00025, 0.00025]]),
                          0.00025, 0.000125),
            plate=plate, excitation=excitation, noise_sigma=0.0, seed=3,
        )
        out = write_dataset(data, tmp_path / "ds")
        for m in range(2):
            assert (out / f"frame_{m:04d}.bin").read_bytes() == \
                (GOLDEN / f"frame_{m:04d}.bin").read_bytes()


def corrupt_manifest(tmp_path, plate, excitation, mutate):
    data = make_set(plate, excitation)
    d = write_dataset(data, tmp_path / "ds")
    doc = json.loads((d / "manifest.json").read_text())
    mutate(doc, d)
    (d / "manifest.json").write_text(json.dumps(doc))
    return d


class TestCorruption:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(CorruptDatasetError):
            open_dataset(tmp_path)

    def test_unreadable_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{not json")
        with pytest.raises(CorruptDatasetError):
            open_dataset(tmp_path)

    def test_unknown_format_version(self, plate, excitation, tmp_path):
        d = corrupt_manifest(tmp_path, plate, excitation,
                             lambda doc, _: doc.update(format_version=99))
        with pytest.raises(FormatVersionError):
            open_dataset(d)

    def test_frame_count_mismatch(self, plate, excitation, tmp_path):
        d = corrupt_manifest(tmp_path, plate, excitation,
                             lambda doc, _: doc.update(n_m=4))
        with pytest.raises(CorruptDatasetError, match="n_m"):
            open_dataset(d)

    def test_missing_required_field(self, plate, excitation, tmp_path):
        d = corrupt_manifest(tmp_path, plate, excitation,
                             lambda doc, _: doc.pop("plate"))
        with pytest.raises(CorruptDatasetError, match="plate"):
            open_dataset(d)

    def test_truncated_payload_names_file(self, plate, excitation, tmp_path):
        data = make_set(plate, excitation)
        d = write_dataset(data, tmp_path / "ds")
        victim = d / "frame_0001.bin"
        victim.write_bytes(victim.read_bytes()[:-4])
        with pytest.raises(CorruptDatasetError, match="frame_0001.bin"):
            open_dataset(d)

    def test_missing_payload(self, plate, excitation, tmp_path):
        data = make_set(plate, excitation)
        d = write_dataset(data, tmp_path / "ds")
        (d / "frame_0002.bin").unlink()
        with pytest.raises(CorruptDatasetError, match="frame_0002.bin"):
            open_dataset(d)

    def test_write_lock_conflict(self, plate, excitation, tmp_path):
        data = make_set(plate, excitation)
        d = tmp_path / "ds"
        d.mkdir()
        (d / ".lock").write_text("pid=1 user=other\n")
        with pytest.raises(CorruptDatasetError, match="lock"):
            write_dataset(data, d)


class TestTruthSidecar:
    def test_round_trip(self, tmp_path):
        g = Grid2D(n_x=8, n_y=6, dx=1e-3, dy=1e-3)
        truth = DefectMap.from_rects(
            g, [(1e-3, 1e-3, 2e-3, 2e-3), (5e-3, 3e-3, 1e-3, 1e-3)], [0.3, 0.6]
        )
        write_truth(truth, tmp_path)
        back = read_truth(tmp_path)
        assert back.grid == g
        assert np.allclose(back.weights, truth.weights, atol=1e-7)  # float32 storage
        assert len(back.rects) == 2

    def test_missing_sidecar(self, tmp_path):
        with pytest.raises(CorruptDatasetError):
            read_truth(tmp_path)


class TestRenderMap:
    def test_pgm_levels(self, tmp_path):
        out = render_map(np.array([[0.0, 1.0], [2.0, 3.0]]), tmp_path / "m.pgm")
        blob = out.read_bytes()
        assert blob.startswith(b"P5\n2 2\n255\n")
        assert list(blob[-4:]) == [0, 85, 170, 255]
        sidecar = Path(str(out) + ".scale.txt").read_text()
        assert "min = 0.0" in sidecar and "max = 3.0" in sidecar

    def test_constant_field_mid_gray(self, tmp_path):
        with pytest.warns(RuntimeWarning):
            out = render_map(np.full((3, 3), 7.0), tmp_path / "flat.pgm")
        assert set(out.read_bytes()[-9:]) == {128}

    def test_txt_full_precision(self, tmp_path):
        rng = np.random.default_rng(5)
        field = rng.random((4, 5))
        out = render_map(field, tmp_path / "m.txt", format="txt")
        back = np.loadtxt(out, delimiter="\t")
        assert np.array_equal(back, field)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(UsageError):
            render_map(np.zeros((2, 2)), tmp_path / "m.bmp", format="bmp")

    def test_wrong_rank(self, tmp_path):
        with pytest.raises(ValueError):
            render_map(np.zeros(4), tmp_path / "m.pgm")
