"""Space-time grids and log-domain solution fields for the F-KPP equation.

A :class:`SolutionField` stores ``log u`` on a set of time slices. Each slice
lives on a uniform spatial grid whose left end may differ between slices
(moving windows), so every slice carries its own origin.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_ndtr

from bbmlab import __version__
from bbmlab.errors import CoverageError, InvalidInputError, SchemeError

WINDOW_POLICIES = ("fixed", "moving")
FIELD_FORMAT = "bbmlab-field/1"


@dataclass(frozen=True)
class SpaceTimeGrid:
    z_min: float
    z_max: float
    dz: float
    dt: float
    t_max: float
    window_policy: str = "fixed"
    window_speed: float = math.sqrt(2.0)

    def __post_init__(self):
        if not (self.dz > 0 and self.dt > 0 and self.t_max > 0):
            raise InvalidInputError("dz, dt and t_max must be positive")
        if not self.z_max > self.z_min:
            raise InvalidInputError("z_max must exceed z_min")
        if self.window_policy not in WINDOW_POLICIES:
            raise InvalidInputError(f"unknown window policy {self.window_policy!r}")
        if self.n_nodes > 5_000_000:
            raise InvalidInputError("grid too large")

    @property
    def n_nodes(self) -> int:
        return int(round((self.z_max - self.z_min) / self.dz)) + 1

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_max / self.dt - 1e-9))

    def nodes(self) -> np.ndarray:
        return self.z_min + self.dz * np.arange(self.n_nodes)

    def required_width(self) -> float:
        return 10.0 * math.sqrt(self.t_max) + 2.0 * math.sqrt(2.0) * self.t_max

    def covers_front(self) -> bool:
        """Fixed windows must hold both the diffusive spread and the front range."""
        if self.window_policy != "fixed":
            return True
        return self.z_max - self.z_min >= self.required_width() - 1e-9

    def check_resolution(self):
        ratio = self.dz**2 / self.dt
        if not 0.1 <= ratio <= 10.0:
            warnings.warn(
                f"dz^2/dt = {ratio:.3g} outside [0.1, 10]; accuracy not guaranteed",
                RuntimeWarning,
                stacklevel=3,
            )

    def to_dict(self) -> dict:
        return {
            "z_min": self.z_min,
            "z_max": self.z_max,
            "dz": self.dz,
            "dt": self.dt,
            "t_max": self.t_max,
            "window_policy": self.window_policy,
            "window_speed": self.window_speed,
        }


@dataclass(frozen=True, eq=False)
class SolutionField:
    """Log-values of u(z, t) = P(M_t <= z) on stored time slices.

    ``logu[i, j]`` is log u at z = ``origins[i] + j * dz`` and t = ``times[i]``.
    """

    grid: SpaceTimeGrid
    times: np.ndarray
    origins: np.ndarray
    logu: np.ndarray
    scheme: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.times, self.origins, self.logu):
            arr.setflags(write=False)
        if self.logu.shape != (len(self.times), self.grid.n_nodes):
            raise InvalidInputError("logu shape does not match grid and times")

    @property
    def dz(self) -> float:
        return self.grid.dz

    @property
    def n_nodes(self) -> int:
        return self.grid.n_nodes

    def z(self, i: int) -> np.ndarray:
        return self.origins[i] + self.dz * np.arange(self.n_nodes)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol:
            raise CoverageError(f"no stored slice at t={t}")
        return i

    def has_time(self, t: float, tol: float = 1e-9) -> bool:
        return bool(np.min(np.abs(self.times - t)) <= tol)

    def window(self, i: int) -> tuple[float, float]:
        lo = float(self.origins[i])
        return lo, lo + self.dz * (self.n_nodes - 1)

    def _slice_logu(self, i: int, z: np.ndarray, outside: str) -> np.ndarray:
        x = (z - self.origins[i]) / self.dz
        n = self.n_nodes
        if outside == "raise":
            if np.any(x < -1e-9) or np.any(x > n - 1 + 1e-9):
                lo, hi = self.window(i)
                raise CoverageError(
                    f"z outside field window [{lo:.4g}, {hi:.4g}] at t={self.times[i]:.4g}"
                )
        left = x < 0
        right = x > n - 1
        xc = np.clip(x, 0.0, n - 1.0)
        j = np.minimum(np.floor(xc).astype(np.int64), n - 2)
        w = xc - j
        row = self.logu[i]
        a = row[j]
        b = row[j + 1]
        with np.errstate(invalid="ignore"):
            out = np.where(w == 0.0, a, (1.0 - w) * a + w * b)
            out = np.where(w == 1.0, b, out)
        if outside == "clip":
            out = np.where(left, -np.inf, out)
            out = np.where(right, 0.0, out)
        return out

    def logu_at(self, z, t: float, outside: str = "raise") -> np.ndarray:
        """Bilinear interpolation of log u in (z, t).

        ``outside`` is ``"raise"`` (coverage error) or ``"clip"`` (u = 0 on
        the left of the window, u = 1 on the right).
        """
        z = np.asarray(z, dtype=float)
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise CoverageError(f"t={t} outside stored range")
        k = int(np.searchsorted(self.times, t))
        if k < len(self.times) and abs(self.times[k] - t) <= 1e-12:
            return self._slice_logu(k, z, outside)
        if k > 0 and abs(self.times[k - 1] - t) <= 1e-12:
            return self._slice_logu(k - 1, z, outside)
        t0, t1 = self.times[k - 1], self.times[k]
        w = (t - t0) / (t1 - t0)
        a = self._slice_logu(k - 1, z, outside)
        b = self._slice_logu(k, z, outside)
        with np.errstate(invalid="ignore"):
            out = (1.0 - w) * a + w * b
        return np.where(np.isneginf(a) | np.isneginf(b), np.minimum(a, b), out)

    def u_at(self, z, t: float, outside: str = "raise") -> np.ndarray:
        return np.exp(self.logu_at(z, t, outside))

    def slice(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        i = self.index_of(t)
        return self.z(i), np.asarray(self.logu[i])

    def check_invariants(self, cdf_mode: bool = True, atol: float = 1e-9) -> dict:
        """Count violations of the structural invariants on every slice.

        The two Gaussian comparisons are u <= P(B_t <= z) and
        u >= exp(-t) P(B_t <= z); they are tested with an absolute slack
        ``atol`` because discrete heat kernels differ from the Gaussian in the
        far tails at absolute levels far below any quantity of interest.
        """
        out = {"bounded": 0, "monotone": 0, "gauss_upper": 0, "gauss_lower": 0}
        for i, t in enumerate(self.times):
            u = np.exp(self.logu[i])
            out["bounded"] += int(np.sum((u > 1.0 + 1e-12) | (u < 0.0)))
            if cdf_mode:
                out["monotone"] += int(np.sum(np.diff(u) < -1e-12))
                if t > 0:
                    g = np.exp(log_ndtr(self.z(i) / math.sqrt(t)))
                    out["gauss_upper"] += int(np.sum(u > g + atol))
                    out["gauss_lower"] += int(np.sum(u < math.exp(-t) * g - atol))
        return out

    # serialization -----------------------------------------------------------------

    def save(self, stem) -> tuple[Path, Path]:
        """Write ``<stem>.csv`` (metadata and slice table) and ``<stem>.bin``.

        The binary file holds ``logu`` as little-endian float64, row-major,
        one row per slice.
        """
        csv_path, bin_path = field_paths(stem)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerow(["format", FIELD_FORMAT])
        w.writerow(["version", __version__])
        w.writerow(["scheme", self.scheme])
        for k, v in self.grid.to_dict().items():
            w.writerow([k, repr(v) if isinstance(v, float) else v])
        w.writerow(["n_nodes", self.n_nodes])
        w.writerow(["n_slices", len(self.times)])
        for k in sorted(self.meta):
            w.writerow([f"meta.{k}", self.meta[k]])
        w.writerow([])
        w.writerow(["slice", "t", "origin"])
        for i, (t, o) in enumerate(zip(self.times, self.origins)):
            w.writerow([i, repr(float(t)), repr(float(o))])
        _atomic_write(csv_path, buf.getvalue().encode())
        _atomic_write(bin_path, np.ascontiguousarray(self.logu, dtype="<f8").tobytes())
        return csv_path, bin_path

    @classmethod
    def load(cls, stem) -> "SolutionField":
        csv_path, bin_path = field_paths(stem)
        text = csv_path.read_text()
        header, _, table = text.partition("\n\n")
        rows = list(csv.reader(io.StringIO(header)))[1:]
        kv = {r[0]: r[1] for r in rows if r}
        if kv.get("format") != FIELD_FORMAT:
            raise InvalidInputError(f"not a field file: {stem}")
        grid = SpaceTimeGrid(
            z_min=float(kv["z_min"]),
            z_max=float(kv["z_max"]),
            dz=float(kv["dz"]),
            dt=float(kv["dt"]),
            t_max=float(kv["t_max"]),
            window_policy=kv["window_policy"],
            window_speed=float(kv["window_speed"]),
        )
        meta = {k[5:]: v for k, v in kv.items() if k.startswith("meta.")}
        trows = list(csv.reader(io.StringIO(table)))[1:]
        times = np.array([float(r[1]) for r in trows if r])
        origins = np.array([float(r[2]) for r in trows if r])
        raw = bin_path.read_bytes()
        logu = np.frombuffer(raw, dtype="<f8").reshape(len(times), int(kv["n_nodes"])).copy()
        if logu.shape[1] != grid.n_nodes:
            raise SchemeError("stored node count disagrees with grid metadata")
        return cls(grid=grid, times=times, origins=origins, logu=logu,
                   scheme=kv["scheme"], meta=meta)


def field_paths(stem) -> tuple[Path, Path]:
    """``<stem>.csv`` and ``<stem>.bin``; a trailing .csv/.bin on ``stem`` is dropped."""
    stem = Path(stem)
    name = stem.name
    if name.endswith((".csv", ".bin")):
        name = name[:-4]
    return stem.parent / (name + ".csv"), stem.parent / (name + ".bin")


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def to_log(u: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.clip(u, 0.0, 1.0))
