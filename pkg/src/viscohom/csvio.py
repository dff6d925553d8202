"""Versioned CSV output.

Every CSV written by the package starts with one comment line
``# viscohom-csv <version> <kind>`` followed by a header row; readers that
skip ``#`` lines (``pandas.read_csv(comment="#")``, :func:`read_csv`) see a
plain table. Column sets per kind are listed in ``COLUMNS``. Wall-clock
times never go into CSVs (they would break bit-identical reruns); they are
appended to ``timings.txt`` instead.
"""

from __future__ import annotations

import csv
from pathlib import Path

CSV_VERSION = 1

COLUMNS = {
    "macro_trajectory": ["time", "u_l2", "v_l2", "kinetic", "elastic", "dissipated", "work",
                         "memory_work", "balance_residual"],
    "fine_trajectory": ["time", "u_l2", "v_l2", "solid_u_l2", "fluid_v_l2", "kinetic", "elastic",
                        "dissipated", "work", "memory_work", "stabilization",
                        "identity_residual"],
    "effective": ["name", "i", "j", "value"],
    "cell": ["load", "kind", "corrector_l2", "corrector_max", "flux"],
    "fine_energy": ["eps", "sup_u", "sup_grad_u", "sup_v", "int_grad_v", "p_l2",
                    "max_identity_residual", "max_cell_divergence"],
    "convergence": ["eps", "error", "relative_error", "floor", "h_fine", "h_macro", "dt", "steps",
                    "fine_dofs"],
    "properties": ["property", "module", "status", "detail"],
    "snapshot": None,  # coordinates and field components, named in the header row
}


def fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12e}"
    return str(v)


def write_csv(path, kind: str, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# viscohom-csv {CSV_VERSION} {kind}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    """Return ``(kind, header, rows)``; values stay strings."""
    with open(path, newline="") as fh:
        first = fh.readline().split()
        kind = first[3] if len(first) >= 4 and first[:2] == ["#", "viscohom-csv"] else None
        rows = list(csv.reader(fh))
    return kind, rows[0], rows[1:]


def append_timing(out_dir, label: str, seconds: float) -> None:
    with open(Path(out_dir) / "timings.txt", "a") as fh:
        fh.write(f"{label} {seconds:.3f}\n")
