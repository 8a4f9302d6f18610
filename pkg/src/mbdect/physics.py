"""Energy-dependent tables: tube spectra and basis-material attenuation."""
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor_io import read_csv_table

DEFAULT_SPAN_KEV = (20.0, 150.0)


class TableError(ValueError):
    """Validation failure for a spectrum or material table. ``code`` names the rule."""

    def __init__(self, code, detail=""):
        self.code = code
        super().__init__(f"{code}: {detail}" if detail else code)


def data_dir():
    """Directory holding the shipped CSV tables (``DECT_DATA_DIR`` overrides)."""
    env = os.environ.get("DECT_DATA_DIR")
    if env:
        return Path(env)
    return Path(__file__).resolve().parent / "data"


def _check_grid(energies):
    if energies.size == 0:
        raise TableError("empty", "no rows")
    if energies.size > 1 and np.any(np.diff(energies) <= 0):
        raise TableError("non-increasing", "energies must be strictly increasing")


@dataclass(frozen=True, eq=False)
class Spectrum:
    label: str
    energies_keV: np.ndarray
    fluence: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies_keV, dtype=np.float64)
        f = np.asarray(self.fluence, dtype=np.float64)
        _check_grid(e)
        if f.shape != e.shape:
            raise TableError("shape", "fluence and energy grids differ in length")
        if np.any(f < 0):
            raise TableError("negative fluence")
        if not np.any(f > 0):
            raise TableError("zero fluence", "need at least one positive bin")
        object.__setattr__(self, "energies_keV", e)
        object.__setattr__(self, "fluence", f)

    def scaled(self, factor):
        return Spectrum(self.label, self.energies_keV, self.fluence * factor)

    def mean_energy(self):
        """Fluence-weighted mean energy in keV."""
        return float(np.dot(self.energies_keV, self.fluence) / self.fluence.sum())


@dataclass(frozen=True, eq=False)
class MaterialTable:
    material_name: str
    energies_keV: np.ndarray
    lac_per_cm: np.ndarray = field(repr=False)

    def __post_init__(self):
        e = np.asarray(self.energies_keV, dtype=np.float64)
        v = np.asarray(self.lac_per_cm, dtype=np.float64)
        _check_grid(e)
        if v.shape != e.shape:
            raise TableError("shape", "lac and energy grids differ in length")
        if np.any(v <= 0):
            raise TableError("non-positive lac")
        object.__setattr__(self, "energies_keV", e)
        object.__setattr__(self, "lac_per_cm", v)

    @property
    def span(self):
        return float(self.energies_keV[0]), float(self.energies_keV[-1])


def lac_at(table, E):
    """Piecewise-linear interpolation of the table at ``E`` (scalar or array).

    Raises ``TableError('out of range')`` outside the tabulated span.
    """
    E_arr = np.asarray(E, dtype=np.float64)
    lo, hi = table.span
    if np.any(E_arr < lo) or np.any(E_arr > hi):
        raise TableError("out of range", f"{table.material_name}: E outside [{lo}, {hi}] keV")
    out = np.interp(E_arr, table.energies_keV, table.lac_per_cm)
    return float(out) if out.ndim == 0 else out


def total_fluence(s):
    return float(np.sum(s.fluence))


def load_spectrum(path, label=None):
    rows = read_csv_table(path, 2)
    if rows.shape[0] == 0:
        raise TableError("empty", str(path))
    return Spectrum(label or Path(path).stem, rows[:, 0], rows[:, 1])


def load_material(path, name=None, require_span=DEFAULT_SPAN_KEV):
    """Load ``energy_keV,lac_per_cm``; the grid must cover ``require_span`` unless it is None."""
    rows = read_csv_table(path, 2)
    if rows.shape[0] == 0:
        raise TableError("empty", str(path))
    table = MaterialTable(name or Path(path).stem, rows[:, 0], rows[:, 1])
    if require_span is not None:
        lo, hi = table.span
        if lo > require_span[0] or hi < require_span[1]:
            raise TableError("span", f"grid [{lo}, {hi}] does not cover {require_span} keV")
    return table


def save_table(path, energies, values, header):
    lines = [f"# {header}"] + [f"{float(e)!r},{float(v)!r}" for e, v in zip(energies, values)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
