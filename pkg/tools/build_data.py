"""Regenerate the bundled data files under src/kcl/data/.

Not part of the installed package.  Inputs are third-party data snapshots:

* ``--mendeleev-db``: ``elements.db`` from the mendeleev wheel
* ``--pymatgen-json``: ``periodic_table.json`` (gunzipped) from the pymatgen wheel
* ``--nci-smi`` / ``--nci-tpsa``: ``Data/NCI/first_5K.smi`` and
  ``first_5k.tpsa.csv`` shipped with RDKit

Usage::

    python tools/build_data.py --mendeleev-db elements.db \
        --pymatgen-json periodic_table.json --nci-smi first_5K.smi \
        --nci-tpsa first_5k.tpsa.csv --out src/kcl/data
"""
import argparse
import csv
import json
import sqlite3
from pathlib import Path

from kcl.elementkg import BinningSpec, equal_frequency_edges, write_binning
from kcl.smiles import ELEMENTS, SmilesError, parse_smiles

SERIES = {
    "Nonmetals": "NonMetal", "Noble gases": "NobleGas", "Alkali metals": "AlkaliMetal",
    "Alkaline earth metals": "AlkalineEarthMetal", "Metalloids": "Metalloid",
    "Halogens": "Halogen", "Poor metals": "PoorMetal",
    "Transition metals": "TransitionMetal", "Lanthanides": "Lanthanide",
    "Actinides": "Actinide",
}
# column -> number of equal-frequency groups in the reference binning
CONTINUOUS = {
    "Weight": 7, "Electronegativity": 7, "ElectronAffinity": 6, "MeltingPoint": 7,
    "BoilingPoint": 7, "Ionization": 7, "Radius": 6, "Hardness": 6, "Modulus": 6,
    "Density": 6, "Conductivity": 6, "Heat": 6, "Abundance": 6,
}
DISCRETE = ["Metallicity", "Period", "Block", "State"]
HALOGENS = {"F", "Cl", "Br", "I"}


def _num(v):
    if v is None or isinstance(v, (list, dict)):
        return None
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def element_rows(db_path, pmg_path):
    con = sqlite3.connect(db_path)
    series = dict(con.execute("select id, name from series"))
    md = {r[0]: r for r in con.execute(
        "select symbol, series_id, period, block, atomic_weight, "
        "specific_heat_capacity, abundance_crust from elements where atomic_number <= 118")}
    pmg = json.loads(Path(pmg_path).read_text())

    rows = []
    for sym in ELEMENTS:
        _, series_id, period, block, weight, heat, abundance = md[sym]
        p = pmg.get(sym, {})
        mp, bp = _num(p.get("Melting point")), _num(p.get("Boiling point"))
        if bp is not None and bp < 298.15:
            state = "Gas"
        elif mp is not None and mp < 298.15:
            state = "Liquid"
        elif mp is not None:
            state = "Solid"
        else:
            state = None
        ies = p.get("Ionization energies") or []
        ie = _num(ies[0]) if ies else None
        row = {
            "symbol": sym,
            "Metallicity": SERIES[series[series_id]],
            "Period": f"Period{period}",
            "Block": f"{block}Block",
            "State": state,
            "Weight": weight,
            "Electronegativity": _num(p.get("X")),
            "ElectronAffinity": _num(p.get("Electron affinity")),
            "MeltingPoint": mp,
            "BoilingPoint": bp,
            "Ionization": ie,
            "Radius": _num(p.get("Atomic radius")),
            "Hardness": _num(p.get("Mineral hardness")),
            "Modulus": _num(p.get("Youngs modulus")),
            "Density": _num(p.get("Density of solid")),
            "Conductivity": _num(p.get("Thermal conductivity")),
            "Heat": heat,
            "Abundance": abundance,
        }
        # pymatgen marks unknown electronegativity as NaN
        rows.append({k: ("" if v is None or v != v else v) for k, v in row.items()})
    return rows


def write_table(rows, out):
    cols = ["symbol"] + DISCRETE + list(CONTINUOUS)
    with open(out / "periodic_table.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: (f"{r[c]:.6g}" if isinstance(r[c], float) else r[c]) for c in cols})


def reference_binning(rows):
    specs = []
    for col, n in CONTINUOUS.items():
        vals = [float(f"{r[col]:.6g}") for r in rows if r[col] != ""]
        specs.append(BinningSpec(col, tuple(equal_frequency_edges(vals, n)), f"{col}Group"))
    return specs


def molecules(smi_path, tpsa_path, limit):
    tpsa = {}
    for line in Path(tpsa_path).read_text().splitlines():
        if line.startswith("#") or "," not in line:
            continue
        smi, val = line.rsplit(",", 1)
        tpsa[smi] = float(val)
    out, seen = [], set()
    for line in Path(smi_path).read_text().splitlines():
        smi = line.split()[0] if line.strip() else ""
        if not smi or smi in seen or smi not in tpsa:
            continue
        try:
            g = parse_smiles(smi)
        except SmilesError:
            continue
        if not 6 <= g.num_atoms <= 30:
            continue
        if any(a.element not in {"C", "N", "O", "S", "P", "F", "Cl", "Br", "I"} for a in g.atoms):
            continue
        seen.add(smi)
        halogen = int(any(a.element in HALOGENS for a in g.atoms))
        out.append((smi, halogen, tpsa[smi]))
        if len(out) >= limit:
            break
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mendeleev-db", required=True)
    ap.add_argument("--pymatgen-json", required=True)
    ap.add_argument("--nci-smi", required=True)
    ap.add_argument("--nci-tpsa", required=True)
    ap.add_argument("--n-molecules", type=int, default=300)
    ap.add_argument("--out", default="src/kcl/data")
    args = ap.parse_args()
    out = Path(args.out)

    rows = element_rows(args.mendeleev_db, args.pymatgen_json)
    write_table(rows, out)
    write_binning(reference_binning(rows), out / "binning.tsv")

    mols = molecules(args.nci_smi, args.nci_tpsa, args.n_molecules)
    with open(out / "molecules.tsv", "w", encoding="utf-8") as fh:
        fh.write("# NCI open compounds (RDKit Data/NCI sample)\n")
        fh.write("# smiles\thas_halogen\ttpsa\n")
        for smi, hal, tp in mols:
            fh.write(f"{smi}\t{hal}\t{tp:.2f}\n")


if __name__ == "__main__":
    main()
