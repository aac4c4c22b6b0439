"""Field, trace and manifest files."""

from __future__ import annotations

from contextlib import contextmanager
import csv
from dataclasses import dataclass, field
from importlib import metadata
import json
import logging
from pathlib import Path
import time
from typing import Any, Iterator, Sequence

import numpy as np

from .errors import MismatchError, NumericalError
from .grid import BoundaryGeometry, TimeGrid
from .tbt import ResidualEntry
from .transport import BoundaryFluxTrace

_LOGGER = logging.getLogger(__name__)

FIELD_FORMATS = ("raw", "csv", "pgm")

_RESIDUAL_COLUMNS = ("phase", "sweep", "step", "source", "norm")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_field(
    values: np.ndarray,
    path: str | Path,
    fmt: str = "raw",
    dx: float = 1.0,
    units: str = "cm^-1",
) -> list[Path]:
    """Write a scalar field indexed [ix, iy]; returns the files written.

    raw: little-endian float64 with x fastest plus a JSON sidecar.
    csv: one line per grid row, bottom row first.
    pgm: binary 8-bit greyscale scaled between min and max, top row first.
    """
    values = np.asarray(values)
    path = Path(path)
    if fmt not in FIELD_FORMATS:
        raise ValueError(f"unknown field format {fmt!r}")
    if values.ndim != 2:
        raise MismatchError(f"expected a 2-D field, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"refusing to write non-finite values to {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    nx, ny = values.shape

    if fmt == "raw":
        path.write_bytes(np.ascontiguousarray(values.T, dtype="<f8").tobytes())
        meta = {"nx": nx, "ny": ny, "dx": dx, "units": units, "dtype": "<f8", "order": "x-fastest"}
        sidecar = _sidecar(path)
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
        return [path, sidecar]

    if fmt == "csv":
        np.savetxt(path, values.T.astype(float), delimiter=",", fmt="%.17g")
        return [path]

    low, high = float(values.min()), float(values.max())
    if high > low:
        scaled = np.rint((values - low) / (high - low) * 255.0)
    else:
        scaled = np.zeros_like(values, dtype=float)
    image = scaled.astype(np.uint8).T[::-1]
    with path.open("wb") as handle:
        handle.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        handle.write(image.tobytes())
    return [path]


def read_field(path: str | Path) -> tuple[np.ndarray, dict[str, Any]]:
    """Read a raw field and its sidecar back as an [ix, iy] array."""
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text(encoding="utf-8"))
    flat = np.frombuffer(path.read_bytes(), dtype="<f8")
    if flat.size != meta["nx"] * meta["ny"]:
        raise MismatchError(f"{path} holds {flat.size} values, sidecar says {meta['nx']}x{meta['ny']}")
    return flat.reshape(meta["ny"], meta["nx"]).T.astype(float), meta


def write_trace_csv(trace: BoundaryFluxTrace, path: str | Path) -> Path:
    """Write the supported entries of a trace as boundary index, arc, time and value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = np.nonzero(trace.support)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["index", "arc", "time", "value"])
        for r, n in zip(rows, cols):
            writer.writerow(
                [int(r), repr(float(trace.arc[r])), repr(float(trace.times[n])), repr(float(trace.values[r, n]))]
            )
    return path


def read_trace_csv(
    path: str | Path, boundary: BoundaryGeometry, time_grid: TimeGrid
) -> BoundaryFluxTrace:
    """Rebuild a trace from `write_trace_csv` output on a known discretisation."""
    values = np.zeros((boundary.count, time_grid.n_rec))
    receivers = np.zeros(boundary.count, dtype=bool)
    window = np.zeros(time_grid.n_rec, dtype=bool)
    with Path(path).open(newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            r = int(row["index"])
            n = time_grid.recorded_index(float(row["time"]))
            if r >= boundary.count:
                raise MismatchError(f"boundary index {r} out of range in {path}")
            values[r, n] = float(row["value"])
            receivers[r] = True
            window[n] = True
    return BoundaryFluxTrace(
        values=values,
        arc=boundary.arc.copy(),
        times=time_grid.times,
        dt_rec=time_grid.dt_rec,
        receivers=receivers,
        window=window,
    )


def write_residual_history(entries: Sequence[ResidualEntry], path: str | Path) -> Path:
    """One line per Kaczmarz step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_RESIDUAL_COLUMNS)
        for entry in entries:
            writer.writerow(
                [entry.phase, entry.sweep, entry.step, entry.source, repr(entry.norm)]
            )
    return path


def read_residual_history(path: str | Path) -> list[ResidualEntry]:
    """Parse a residual history CSV."""
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return [
            ResidualEntry(
                phase=row["phase"],
                sweep=int(row["sweep"]),
                step=int(row["step"]),
                source=int(row["source"]),
                norm=float(row["norm"]),
            )
            for row in csv.DictReader(handle)
        ]


def write_sweep_norms(norms: Sequence[tuple[str, int, float]], path: str | Path) -> Path:
    """One line per (phase, sweep) with the all-source residual norm."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["phase", "sweep", "norm"])
        for phase, sweep, norm in norms:
            writer.writerow([phase, sweep, repr(norm)])
    return path


def _package_version(name: str) -> str:
    try:
        return metadata.version(name)
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunManifest:
    """Record of one CLI run: configuration, constants, files and timings."""

    command: str
    config: dict[str, Any]
    config_hash: str
    derived: dict[str, Any] = field(default_factory=dict)
    files: list[dict[str, str]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    status: str = "running"
    error: str | None = None
    versions: dict[str, str] = field(
        default_factory=lambda: {
            name: _package_version(name)
            for name in ("dotshape", "numpy", "scipy", "pydantic", "click")
        }
    )

    def add_files(self, paths: Sequence[Path], kind: str, root: Path) -> None:
        """List written files relative to the output directory."""
        for path in paths:
            self.files.append({"path": Path(path).relative_to(root).as_posix(), "kind": kind})

    @contextmanager
    def timing(self, name: str) -> Iterator[None]:
        """Measure the wall-clock time of a block."""
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start

    def write(self, path: str | Path) -> Path:
        """Write the manifest as JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = {
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "derived": self.derived,
            "files": self.files,
            "timings": self.timings,
            "status": self.status,
            "error": self.error,
            "versions": self.versions,
        }
        path.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")
        _LOGGER.debug("Wrote manifest %s with %s files", path, len(self.files))
        return path
