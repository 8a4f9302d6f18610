"""Regenerate the shipped energy tables under src/mbdect/data/.

Attenuation values come from the Elam/NIST tables bundled with ``xraydb``;
compositions are the NIST ICRU-44 weight fractions. Spectra are unfiltered
Kramers shapes hardened by aluminium/copper filtration and normalised to a
fixed number of photons per detector bin.

    python scripts/make_tables.py [--out DIR]
"""
import argparse
from pathlib import Path

import numpy as np
import xraydb

ENERGIES = np.arange(20.0, 151.0, 1.0)

# weight fractions by element, density in g/cm^3
COMPOSITIONS = {
    "water": (1.0, {"H": 0.111894, "O": 0.888106}),
    # ICRU-44 cortical bone
    "bone": (1.92, {"H": 0.034, "C": 0.155, "N": 0.042, "O": 0.435, "Na": 0.001,
                    "Mg": 0.002, "P": 0.103, "S": 0.003, "Ca": 0.225}),
}

SPECTRA = {
    # name: (kVp, mm Al, mm Cu, total photons per bin)
    "spectrum_90kVp": (90.0, 3.0, 0.0, 1.0e5),
    "spectrum_140kVp": (140.0, 3.0, 0.4, 1.0e5),
}


def mixture_lac(density, fractions, energies_kev):
    ev = energies_kev * 1000.0
    mass = sum(w * xraydb.mu_elam(el, ev, kind="total") for el, w in fractions.items())
    return density * mass


def kramers(kvp, mm_al, mm_cu, total, energies_kev):
    shape = np.where(energies_kev < kvp, (kvp - energies_kev) / energies_kev, 0.0)
    ev = energies_kev * 1000.0
    atten = (xraydb.material_mu("Al", ev, density=2.699) * mm_al / 10.0
             + xraydb.material_mu("Cu", ev, density=8.96) * mm_cu / 10.0)
    shape = shape * np.exp(-atten)
    return total * shape / shape.sum()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src" / "mbdect" / "data"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, (rho, frac) in COMPOSITIONS.items():
        lac = mixture_lac(rho, frac, ENERGIES)
        rows = "\n".join(f"{e:.1f},{float(v)!r}" for e, v in zip(ENERGIES, lac))
        (out / f"{name}.csv").write_text(
            f"# {name}: linear attenuation coefficient, xraydb (Elam) total cross section\n"
            f"# energy_keV,lac_per_cm\n{rows}\n")
    for name, (kvp, al, cu, total) in SPECTRA.items():
        flu = kramers(kvp, al, cu, total, ENERGIES)
        rows = "\n".join(f"{e:.1f},{float(v)!r}" for e, v in zip(ENERGIES, flu))
        (out / f"{name}.csv").write_text(
            f"# {name}: Kramers {kvp:g} kVp, {al:g} mm Al, {cu:g} mm Cu, {total:g} photons\n"
            f"# energy_keV,fluence\n{rows}\n")
        print(name, "mean energy", float((ENERGIES * flu).sum() / flu.sum()))


if __name__ == "__main__":
    main()
