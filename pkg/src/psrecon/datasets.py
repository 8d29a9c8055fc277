"""On-disk dataset format, plus portable map rendering.

A dataset is a directory: a JSON manifest describing the acquisition and
one raw binary payload per measurement, little-endian float32, row-major
with x fastest.  Payload bytes round-trip exactly.  Writers take an
exclusive lock file; readers never lock and can stream single frames
without loading the rest.
"""

from __future__ import annotations

import getpass
import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import CorruptDatasetError, FormatVersionError, UsageError
from .phantom import DefectMap, MeasurementSet, Rect, ScanPlan
from .thermal import ExcitationTemporal, Grid2D, PlateSpec

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"
PAYLOAD_DTYPE = "<f4"


class _WriteLock:
    """Exclusive advisory lock for dataset writes: single writer, any
    number of readers."""

    def __init__(self, directory: Path):
        self.path = directory / LOCK_NAME
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CorruptDatasetError(
                f"dataset is locked by another writer: {self.path} exists"
            ) from None
        os.write(self.fd, f"pid={os.getpid()} user={getpass.getuser()}\n".encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
        return False


def _frame_name(m: int) -> str:
    return f"frame_{m:04d}.bin"


def _series_name(m: int) -> str:
    return f"series_{m:04d}.bin"


def write_dataset(data: MeasurementSet, directory: str | Path) -> Path:
    """Write a measurement set to a dataset directory.

    Creates the directory if needed.  Refuses to run concurrently with
    another writer on the same directory.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "grid": {
            "n_x": data.grid.n_x,
            "n_y": data.grid.n_y,
            "dx": data.grid.dx,
            "dy": data.grid.dy,
        },
        "n_m": data.n_m,
        "eval_time": data.eval_time,
        "plate": {
            "thickness": data.plate.thickness,
            "diffusivity": data.plate.diffusivity,
            "density": data.plate.density,
            "heat_capacity": data.plate.heat_capacity,
            "conductivity": data.plate.conductivity,
            "reflection_coeff": data.plate.reflection_coeff,
        },
        "excitation": {
            "pulse_duration": data.excitation.pulse_duration,
            "peak_power": data.excitation.peak_power,
            "frame_rate": data.excitation.frame_rate,
        },
        "scan": {
            "positions": data.plan.positions.tolist(),
            "spot_pitch": data.plan.spot_pitch,
            "spot_diameter": data.plan.spot_diameter,
            "n_rows": data.plan.n_rows,
        },
        "noise_sigma": data.noise_sigma,
        "seed": data.seed,
        "payload": {
            "dtype": PAYLOAD_DTYPE,
            "order": "row-major, x fastest",
            "frames": [_frame_name(m) for m in range(data.n_m)],
        },
    }
    if data.series is not None:
        manifest["series"] = {
            "files": [_series_name(m) for m in range(data.n_m)],
            "n_t": int(data.series.shape[1]),
            "frame_times": list(np.asarray(data.frame_times, dtype=float)),
        }
    with _WriteLock(directory):
        for m in range(data.n_m):
            frame = np.ascontiguousarray(data.frames[m], dtype=PAYLOAD_DTYPE)
            (directory / _frame_name(m)).write_bytes(frame.tobytes(order="C"))
        if data.series is not None:
            for m in range(data.n_m):
                chunk = np.ascontiguousarray(data.series[m], dtype=PAYLOAD_DTYPE)
                (directory / _series_name(m)).write_bytes(chunk.tobytes(order="C"))
        (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return directory


@dataclass
class DatasetReader:
    """Lazy view of a dataset: the manifest is parsed eagerly, payloads
    are read one frame at a time on demand."""

    directory: Path
    manifest: dict
    grid: Grid2D
    plan: ScanPlan
    plate: PlateSpec
    excitation: ExcitationTemporal

    @property
    def n_m(self) -> int:
        return int(self.manifest["n_m"])

    @property
    def eval_time(self) -> float:
        return float(self.manifest["eval_time"])

    def _read_payload(self, name: str, shape: tuple[int, ...]) -> NDArray[np.float32]:
        path = self.directory / name
        expected = int(np.prod(shape)) * 4
        if not path.exists():
            raise CorruptDatasetError(f"missing payload file {path}")
        actual = path.stat().st_size
        if actual != expected:
            raise CorruptDatasetError(
                f"truncated or oversized payload {path}: expected {expected} bytes, found {actual}"
            )
        return np.fromfile(path, dtype=PAYLOAD_DTYPE).reshape(shape)

    def frame(self, m: int) -> NDArray[np.float32]:
        if not 0 <= m < self.n_m:
            raise IndexError(f"measurement index {m} out of range [0, {self.n_m})")
        return self._read_payload(self.manifest["payload"]["frames"][m], self.grid.shape)

    def series(self, m: int) -> NDArray[np.float32]:
        if "series" not in self.manifest:
            raise CorruptDatasetError(f"dataset {self.directory} carries no time series")
        n_t = int(self.manifest["series"]["n_t"])
        return self._read_payload(
            self.manifest["series"]["files"][m], (n_t, self.grid.n_y, self.grid.n_x)
        )

    def load_all(self) -> MeasurementSet:
        frames = np.stack([self.frame(m) for m in range(self.n_m)])
        series = None
        times = None
        if "series" in self.manifest:
            series = np.stack([self.series(m) for m in range(self.n_m)])
            times = np.asarray(self.manifest["series"]["frame_times"], dtype=float)
        return MeasurementSet(
            grid=self.grid,
            frames=frames,
            eval_time=self.eval_time,
            plan=self.plan,
            plate=self.plate,
            excitation=self.excitation,
            noise_sigma=float(self.manifest["noise_sigma"]),
            seed=int(self.manifest["seed"]),
            series=series,
            frame_times=times,
        )


def open_dataset(directory: str | Path) -> DatasetReader:
    """Parse and validate a dataset's manifest without touching payloads
    beyond a size check."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise CorruptDatasetError(f"missing manifest {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as err:
        raise CorruptDatasetError(f"unparseable manifest {manifest_path}: {err}") from err

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"{manifest_path} declares format_version {version!r}; this build reads "
            f"{FORMAT_VERSION}"
        )
    required = ("grid", "n_m", "eval_time", "plate", "excitation", "scan", "payload")
    missing = [key for key in required if key not in manifest]
    if missing:
        raise CorruptDatasetError(f"{manifest_path} lacks required fields: {missing}")

    g = manifest["grid"]
    grid = Grid2D(n_x=int(g["n_x"]), n_y=int(g["n_y"]), dx=float(g["dx"]), dy=float(g["dy"]))
    s = manifest["scan"]
    plan = ScanPlan(
        positions=np.asarray(s["positions"], dtype=float),
        spot_pitch=float(s["spot_pitch"]),
        spot_diameter=float(s["spot_diameter"]),
        n_rows=int(s.get("n_rows", 1)),
    )
    p = manifest["plate"]
    plate = PlateSpec(
        thickness=float(p["thickness"]),
        diffusivity=float(p["diffusivity"]),
        density=float(p["density"]),
        heat_capacity=float(p["heat_capacity"]),
        conductivity=None if p.get("conductivity") is None else float(p["conductivity"]),
        reflection_coeff=float(p["reflection_coeff"]),
    )
    e = manifest["excitation"]
    excitation = ExcitationTemporal(
        pulse_duration=float(e["pulse_duration"]),
        peak_power=float(e["peak_power"]),
        frame_rate=float(e["frame_rate"]),
    )
    frames = manifest["payload"].get("frames", [])
    if len(frames) != int(manifest["n_m"]):
        raise CorruptDatasetError(
            f"{manifest_path} declares n_m={manifest['n_m']} but lists {len(frames)} frame files"
        )
    reader = DatasetReader(
        directory=directory,
        manifest=manifest,
        grid=grid,
        plan=plan,
        plate=plate,
        excitation=excitation,
    )
    # fail fast on missing/truncated payloads without reading their bytes
    for name in frames:
        path = directory / name
        if not path.exists():
            raise CorruptDatasetError(f"missing payload file {path}")
        expected = grid.n_pixels * 4
        if path.stat().st_size != expected:
            raise CorruptDatasetError(
                f"truncated or oversized payload {path}: expected {expected} bytes, "
                f"found {path.stat().st_size}"
            )
    return reader


def read_dataset(directory: str | Path) -> MeasurementSet:
    """Read a complete dataset into memory."""
    return open_dataset(directory).load_all()


TRUTH_NAME = "truth.json"
TRUTH_WEIGHTS_NAME = "truth_weights.bin"


def write_truth(defects: DefectMap, directory: str | Path) -> Path:
    """Store the ground-truth defect map next to a synthetic dataset."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {
        "grid": {
            "n_x": defects.grid.n_x,
            "n_y": defects.grid.n_y,
            "dx": defects.grid.dx,
            "dy": defects.grid.dy,
        },
        "rects": [list(r) for r in defects.rects],
        "weights_file": TRUTH_WEIGHTS_NAME,
    }
    weights = np.ascontiguousarray(defects.weights, dtype=PAYLOAD_DTYPE)
    (directory / TRUTH_WEIGHTS_NAME).write_bytes(weights.tobytes(order="C"))
    (directory / TRUTH_NAME).write_text(json.dumps(doc, indent=2) + "\n")
    return directory


def read_truth(directory: str | Path) -> DefectMap:
    directory = Path(directory)
    path = directory / TRUTH_NAME
    if not path.exists():
        raise CorruptDatasetError(f"missing truth sidecar {path}")
    doc = json.loads(path.read_text())
    g = doc["grid"]
    grid = Grid2D(n_x=int(g["n_x"]), n_y=int(g["n_y"]), dx=float(g["dx"]), dy=float(g["dy"]))
    weights_path = directory / doc["weights_file"]
    if not weights_path.exists():
        raise CorruptDatasetError(f"missing truth weights {weights_path}")
    weights = np.fromfile(weights_path, dtype=PAYLOAD_DTYPE).astype(float)
    if weights.size != grid.n_pixels:
        raise CorruptDatasetError(
            f"truth weights {weights_path} hold {weights.size} values for "
            f"{grid.n_pixels} pixels"
        )
    rects: list[Rect] = [tuple(r) for r in doc["rects"]]
    return DefectMap(grid=grid, weights=weights.reshape(grid.shape), rects=rects)


def render_map(field: NDArray, path: str | Path, format: str = "pgm") -> Path:
    """Render a 2-D map to a portable file.

    ``format='pgm'`` writes an 8-bit binary graymap normalised to the
    field's range, with the scale recorded in a ``<name>.scale.txt``
    sidecar; a constant field renders mid-gray and warns.
    ``format='txt'`` writes tab-delimited text at full precision.
    """
    field = np.asarray(field, dtype=float)
    if field.ndim != 2:
        raise ValueError(f"expected a 2-D field, got shape {field.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    if format == "txt":
        np.savetxt(path, field, fmt="%.17e", delimiter="\t")
        return path
    if format != "pgm":
        raise UsageError(f"unknown render format {format!r}; expected 'pgm' or 'txt'")

    lo, hi = float(field.min()), float(field.max())
    degenerate = hi == lo
    if degenerate:
        warnings.warn("constant field; rendering uniform mid-gray", RuntimeWarning)
        levels = np.full(field.shape, 128, dtype=np.uint8)
    else:
        levels = np.rint((field - lo) / (hi - lo) * 255.0).astype(np.uint8)
    header = f"P5\n{field.shape[1]} {field.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + levels.tobytes(order="C"))
    sidecar = Path(str(path) + ".scale.txt")
    lines = [
        f"min = {lo!r}",
        f"max = {hi!r}",
        "maxval = 255",
        "mapping = round((value - min) / (max - min) * 255)",
    ]
    if degenerate:
        lines.append("note = constant field; all pixels rendered 128")
    sidecar.write_text("\n".join(lines) + "\n")
    return path
