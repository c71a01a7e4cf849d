"""Random circular-anomaly phantoms, IDW rasterisation and dataset files."""

from __future__ import annotations

import contextlib
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .fem import (DEFAULT_CONTACT_IMPEDANCE, add_measurement_noise, build_adjacent_protocol,
                  forward_voltages)
from .io import atomic_open, read_records, write_records
from .mesh import Circle, Mesh, build_disk_mesh, element_centroids, paint_phantom

CONDUCTIVITIES = {"two": (0.5, 1.5), "four": (0.01, 0.1, 0.5, 1.5)}
CENTER_RANGE = 0.55
RADIUS_RANGE = (0.1, 0.3)
IMAGE_SIDE = 128
IDW_POWER = 2.0
IDW_NEIGHBORS = 6
FULL_SPLIT = (21600, 2160, 50)


@dataclass(frozen=True)
class PhantomSpec:
    circles: tuple[Circle, ...]
    background: float = 1.0

    def paint(self, mesh: Mesh) -> np.ndarray:
        return paint_phantom(mesh, self.background, self.circles)

    def to_dict(self) -> dict:
        return {"background": self.background,
                "circles": [{"center": list(c.center), "radius": c.radius,
                             "conductivity": c.conductivity} for c in self.circles]}

    @classmethod
    def from_dict(cls, data: dict) -> "PhantomSpec":
        circles = tuple(Circle(tuple(map(float, c["center"])), float(c["radius"]),
                               float(c["conductivity"])) for c in data.get("circles", []))
        return cls(circles=circles, background=float(data.get("background", 1.0)))


def sample_phantom(kind: str, rng_seed: int, background: float = 1.0) -> PhantomSpec:
    """Circles with centres ~ U(-0.55, 0.55)^2 and radii ~ U(0.1, 0.3).

    A radius that would push the circle past the unit circle is redrawn, so
    the centre distribution stays exactly uniform.
    """
    try:
        values = CONDUCTIVITIES[kind]
    except KeyError:
        raise ValueError(f"unknown phantom kind {kind!r}; expected one of {sorted(CONDUCTIVITIES)}")
    rng = np.random.default_rng(rng_seed)
    circles = []
    for cond in values:
        cx, cy = rng.uniform(-CENTER_RANGE, CENTER_RANGE, size=2)
        r = rng.uniform(*RADIUS_RANGE)
        while np.hypot(cx, cy) + r > 1.0:
            r = rng.uniform(*RADIUS_RANGE)
        circles.append(Circle((float(cx), float(cy)), float(r), float(cond)))
    return PhantomSpec(circles=tuple(circles), background=background)


def pixel_centers(side: int, radius: float = 1.0) -> np.ndarray:
    """Pixel centres ``(side, side, 2)``; row 0 is the top (largest y)."""
    step = 2.0 * radius / side
    coords = -radius + (np.arange(side) + 0.5) * step
    xs, ys = np.meshgrid(coords, coords[::-1])
    return np.stack([xs, ys], axis=-1)


def idw(points, values, queries, power: float = IDW_POWER, neighbors: int = IDW_NEIGHBORS) -> np.ndarray:
    """Inverse-distance-weighted average of the ``neighbors`` nearest ``points``.

    Weights are ``d**-power``; a query closer than 1e-12 to a point takes that
    point's value.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    queries = np.asarray(queries, dtype=float).reshape(-1, 2)
    if len(queries) == 0:
        return np.empty(0)
    k = min(neighbors, len(points))
    dist, idx = cKDTree(points).query(queries, k=k)
    dist = dist.reshape(len(queries), k)
    idx = idx.reshape(len(queries), k)
    out = np.empty(len(queries))
    hit = dist[:, 0] < 1e-12
    out[hit] = values[idx[hit, 0]]
    w = dist[~hit] ** (-power)
    out[~hit] = np.sum(w * values[idx[~hit]], axis=1) / np.sum(w, axis=1)
    return out


def rasterize_idw(mesh: Mesh, field_values, grid: int = IMAGE_SIDE, power: float = IDW_POWER,
                  neighbors: int = IDW_NEIGHBORS, background: float = 1.0) -> np.ndarray:
    """Image of a per-element field, interpolated from the element centroids.

    Pixels whose centre lies outside the disk get ``background``.
    """
    values = np.asarray(field_values, dtype=float)
    if values.shape != (mesh.n_elements,):
        raise ValueError(f"field has shape {values.shape}, mesh has {mesh.n_elements} elements")
    pts = pixel_centers(grid, mesh.radius).reshape(-1, 2)
    inside = np.hypot(pts[:, 0], pts[:, 1]) <= mesh.radius
    out = np.full(len(pts), float(background))
    out[inside] = idw(element_centroids(mesh), values, pts[inside], power, neighbors)
    return out.reshape(grid, grid)


def default_split(count: int) -> tuple[int, int, int]:
    """Train/val/test sizes in the 21600/2160/remainder proportions."""
    total = sum(FULL_SPLIT)
    if count == total:
        return FULL_SPLIT
    train = count * FULL_SPLIT[0] // total
    val = count * FULL_SPLIT[1] // total
    return train, val, count - train - val


def split_ranges(count: int, split) -> dict[str, tuple[int, int]]:
    if len(split) != 3 or any(s < 0 for s in split) or sum(split) != count:
        raise ValueError(f"split {tuple(split)} does not sum to {count}")
    bounds = np.cumsum([0, *split])
    return {name: (int(bounds[i]), int(bounds[i + 1]))
            for i, name in enumerate(("train", "val", "test"))}


@dataclass
class DatasetContext:
    mesh: Mesh = field(default_factory=build_disk_mesh)
    contact_impedances: float = DEFAULT_CONTACT_IMPEDANCE
    grid: int = IMAGE_SIDE

    @property
    def protocol(self):
        return build_adjacent_protocol(self.mesh.n_electrodes)


def make_record(kind: str, seed: int, snr_db: float, ctx: DatasetContext):
    """``(image, noisy measurements)`` for one seed."""
    spec = sample_phantom(kind, seed)
    sigma = spec.paint(ctx.mesh)
    image = rasterize_idw(ctx.mesh, sigma, grid=ctx.grid, background=spec.background)
    v = forward_voltages(ctx.mesh, sigma, ctx.contact_impedances, ctx.protocol)
    return image, add_measurement_noise(v, snr_db, seed)


def _make_record_star(args):
    return make_record(*args)


def generate_dataset(kind: str, count: int, snr_db: float, split=None, base_seed: int = 0,
                     output_path=".", ctx: DatasetContext | None = None,
                     workers: int = 1) -> dict[str, Path]:
    """Write ``train.bin``, ``val.bin``, ``test.bin`` and ``manifest.txt``.

    Record ``i`` uses seed ``base_seed + i``; splits are contiguous index
    ranges.  On failure every file written by this call is removed.
    """
    ctx = ctx or DatasetContext()
    split = tuple(split) if split is not None else default_split(count)
    ranges = split_ranges(count, split)
    out = Path(output_path)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(kind, base_seed + i, snr_db, ctx) for i in range(count)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_make_record_star, jobs, chunksize=16))
    else:
        records = [make_record(*job) for job in jobs]

    written: dict[str, Path] = {}
    try:
        for name, (lo, hi) in ranges.items():
            path = out / f"{name}.bin"
            images = np.array([records[i][0] for i in range(lo, hi)]).reshape(hi - lo, ctx.grid, ctx.grid)
            meas = np.array([records[i][1] for i in range(lo, hi)]).reshape(hi - lo, ctx.protocol.n_measurements)
            write_records(path, [base_seed + i for i in range(lo, hi)], images, meas)
            written[name] = path
        manifest = out / "manifest.txt"
        with atomic_open(manifest, "w") as fh:
            fh.write(f"kind {kind}\ncount {count}\nsnr_db {float(snr_db)!r}\nbase_seed {base_seed}\n")
            fh.write(f"grid {ctx.grid}\nmeasurements {ctx.protocol.n_measurements}\n")
            for name, (lo, hi) in ranges.items():
                fh.write(f"{name} {lo} {hi} {hi - lo}\n")
        written["manifest"] = manifest
    except BaseException:
        for path in written.values():
            with contextlib.suppress(FileNotFoundError):
                path.unlink()
        raise
    return written


def read_manifest(path) -> dict:
    info: dict = {"splits": {}}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts[0] in ("train", "val", "test"):
            info["splits"][parts[0]] = tuple(int(p) for p in parts[1:])
        else:
            info[parts[0]] = parts[1]
    return info


def validate_dataset(output_path) -> int:
    """Check every record against the manifest; returns the record count."""
    out = Path(output_path)
    info = read_manifest(out / "manifest.txt")
    n_meas, grid = int(info["measurements"]), int(info["grid"])
    bg = 1.0
    total = 0
    pts = pixel_centers(grid).reshape(-1, 2)
    outside = np.hypot(pts[:, 0], pts[:, 1]) > 1.0
    for name, (lo, hi, n) in info["splits"].items():
        rec = read_records(out / f"{name}.bin")
        if len(rec) != n or hi - lo != n:
            raise ValueError(f"{name}: {len(rec)} records, manifest says {n}")
        if rec["measurements"].shape[1] != n_meas or rec["image"].shape[1:] != (grid, grid):
            raise ValueError(f"{name}: record shape mismatch")
        if not (np.all(np.isfinite(rec["image"])) and np.all(np.isfinite(rec["measurements"]))):
            raise ValueError(f"{name}: non-finite values")
        if np.any(rec["image"].reshape(n, -1)[:, outside] != bg):
            raise ValueError(f"{name}: pixels outside the disk differ from the background")
        total += n
    return total


def remove_dataset(output_path) -> None:
    shutil.rmtree(output_path, ignore_errors=True)
