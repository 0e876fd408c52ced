"""Dataset bundle and its on-disk layout (JSON manifest + raw float32 arrays)."""

import json
import os
from dataclasses import dataclass, replace

import numpy as np

FORMAT = "ccfusion-dataset"
VERSION = 1
DTYPE = np.dtype("<f4")

_FILES = {
    "features": "features.f32",
    "toa": "toa.f32",
    "laser": "laser.f32",
    "ground_truth": "ground_truth.f32",
}


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    toa: np.ndarray
    trp_positions: np.ndarray
    sample_rate_hz: float
    dt: float
    ue_height: float
    laser: np.ndarray = None
    ground_truth: np.ndarray = None
    room_bbox: np.ndarray = None

    def __post_init__(self):
        n, m, c = self.features.shape
        if self.toa.shape != (n, m):
            raise DatasetFormatError(f"toa has shape {self.toa.shape}, expected {(n, m)}")
        if np.shape(self.trp_positions) != (m, 3):
            raise DatasetFormatError("trp_positions must be (M, 3)")
        if self.laser is not None and (self.laser.ndim != 3 or self.laser.shape[0] != n
                                       or self.laser.shape[2] != 2):
            raise DatasetFormatError(f"laser has shape {self.laser.shape}, expected (N, K, 2)")
        if self.ground_truth is not None and self.ground_truth.shape != (n, 3):
            raise DatasetFormatError("ground_truth must be (N, 3)")

    @property
    def n_steps(self):
        return self.features.shape[0]

    @property
    def n_trps(self):
        return self.features.shape[1]

    @property
    def c_bar(self):
        return self.features.shape[2]

    @property
    def n_beams(self):
        return 0 if self.laser is None else self.laser.shape[1]

    @property
    def has_laser(self):
        return self.laser is not None

    @property
    def has_ground_truth(self):
        return self.ground_truth is not None

    def without_ground_truth(self):
        return replace(self, ground_truth=None)

    def manifest(self):
        arrays = {"features": list(self.features.shape), "toa": list(self.toa.shape)}
        if self.has_laser:
            arrays["laser"] = list(self.laser.shape)
        if self.has_ground_truth:
            arrays["ground_truth"] = list(self.ground_truth.shape)
        return {
            "format": FORMAT,
            "version": VERSION,
            "byte_order": "little",
            "dtype": "float32",
            "layout": "row-major",
            "M": self.n_trps,
            "N": self.n_steps,
            "C_bar": self.c_bar,
            "K": self.n_beams,
            "sample_rate_hz": float(self.sample_rate_hz),
            "dt": float(self.dt),
            "ue_height": float(self.ue_height),
            "trp_positions": np.asarray(self.trp_positions, dtype=float).tolist(),
            "room_bbox": None if self.room_bbox is None
            else np.asarray(self.room_bbox, dtype=float).tolist(),
            "has_laser": self.has_laser,
            "has_ground_truth": self.has_ground_truth,
            "arrays": {k: {"file": _FILES[k], "shape": v} for k, v in arrays.items()},
        }


def write_dataset(dataset, directory):
    os.makedirs(directory, exist_ok=True)
    manifest = dataset.manifest()
    for name, entry in manifest["arrays"].items():
        arr = np.ascontiguousarray(getattr(dataset, name), dtype=DTYPE)
        with open(os.path.join(directory, entry["file"]), "wb") as fh:
            fh.write(arr.tobytes(order="C"))
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _expected_shapes(man):
    n, m, c, k = man["N"], man["M"], man["C_bar"], man["K"]
    shapes = {"features": [n, m, c], "toa": [n, m]}
    if man["has_laser"]:
        shapes["laser"] = [n, k, 2]
    if man["has_ground_truth"]:
        shapes["ground_truth"] = [n, 3]
    return shapes


def read_manifest(directory):
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise DatasetFormatError(f"no manifest.json in {directory}")
    with open(path) as fh:
        man = json.load(fh)
    if man.get("format") != FORMAT:
        raise DatasetFormatError(f"{path} is not a {FORMAT} manifest")
    if man.get("version") != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {man.get('version')!r}")
    if man.get("byte_order") != "little" or man.get("dtype") != "float32":
        raise DatasetFormatError("only little-endian float32 arrays are supported")
    return man


def _load_array(directory, man, name):
    entry = man["arrays"].get(name)
    if entry is None:
        raise DatasetFormatError(f"manifest lists no '{name}' array")
    shape = tuple(entry["shape"])
    expected = tuple(_expected_shapes(man)[name])
    if shape != expected:
        raise DatasetFormatError(
            f"array '{name}' declared with shape {shape}, header implies {expected}")
    path = os.path.join(directory, entry["file"])
    if not os.path.exists(path):
        raise DatasetFormatError(f"array '{name}' is missing ({path})")
    size = os.path.getsize(path)
    want = int(np.prod(shape)) * DTYPE.itemsize
    if size != want:
        raise DatasetFormatError(
            f"array '{name}' holds {size} bytes, shape {shape} needs {want}")
    return np.fromfile(path, dtype=DTYPE).reshape(shape)


def read_dataset(directory, mode="full"):
    """Load a dataset directory.

    ``mode="train"`` never opens the ground-truth file, so training code
    cannot see positions even by accident. ``mode="test"`` skips laser scans.
    """
    if mode not in ("full", "train", "test"):
        raise ValueError(f"unknown mode {mode!r}")
    man = read_manifest(directory)
    laser = None
    if man["has_laser"] and mode != "test":
        laser = _load_array(directory, man, "laser")
    truth = None
    if man["has_ground_truth"] and mode != "train":
        truth = _load_array(directory, man, "ground_truth")
    return Dataset(
        features=_load_array(directory, man, "features"),
        toa=_load_array(directory, man, "toa"),
        trp_positions=np.asarray(man["trp_positions"], dtype=float).reshape(man["M"], 3),
        sample_rate_hz=man["sample_rate_hz"],
        dt=man["dt"],
        ue_height=man["ue_height"],
        laser=laser,
        ground_truth=truth,
        room_bbox=None if man.get("room_bbox") is None else np.asarray(man["room_bbox"]),
    )
