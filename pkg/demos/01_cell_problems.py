"""Effective coefficients from the reference cell.

First the one-dimensional laminate, where the answer is known in closed form
(the harmonic mean of the two layer stiffnesses). Then a disk inclusion in a
viscous matrix: the elastic and viscous effective tensors, the density, and
the arithmetic (Voigt) average as an upper bound on the elastic tensor.

    python demos/01_cell_problems.py
"""

import numpy as np

from viscohom import CoefficientField, assemble_effective, build_cell, mesh_cell
from viscohom.geometry import SOLID

ONE = CoefficientField.scalar(1.0)

# laminate: a1 = 1 on half the period, a2 = 4 on the rest
lam = build_cell({"kind": "laminate", "dimension": 1, "thickness": 0.5}, for_fluid=False)
print("laminate, a1 = 1, a2 = 4, harmonic mean 1.6")
for res in (9, 33, 129, 128):
    model = assemble_effective(lam, mesh_cell(lam, res), CoefficientField.tensor(1.0, 1), None,
                               CoefficientField.tensor(1.0, 1), None, ONE, ONE, full_cell=True,
                               A0_matrix=CoefficientField.tensor(4.0, 1), keep_correctors=False)
    print(f"  {res:4d} cells: C0 = {model.C0[0, 0]:.6f}")
print("  (an interface on a mesh node makes the answer exact)\n")

# disk inclusion: solid elasticity inside, Stokes-type viscosity outside
disk = build_cell({"kind": "disk", "center": [0.5, 0.5], "radius": 0.25})
mesh = mesh_cell(disk, 32)
A0 = CoefficientField.tensor(1.0, 2)
B0 = CoefficientField.tensor(0.1, 2)
model = assemble_effective(disk, mesh, A0, None, B0, None, CoefficientField.scalar(2.0), ONE)
np.set_printoptions(precision=4, suppress=True)
print("disk r = 1/4, solid stiffness 1, fluid viscosity 0.1, densities 2 and 1")
print("C0 (elastic, rows/cols are d u_i / d x_j in row-major order):")
print(model.C0)
print("C1 (viscous):")
print(model.C1)
print(f"rho0 = {model.rho0:.5f}   (closed form {2 * np.pi / 16 + (1 - np.pi / 16):.5f})")
solid = (mesh.phase == SOLID).mean()
print(f"Voigt value on the mesh: {solid:.4f}")
print("  constant stiffness in an isolated inclusion needs no corrector: C0 hits the bound\n")

# a stiffness that varies inside the inclusion makes the corrector nonzero
from viscohom import TrigPolynomial  # noqa: E402

wave = TrigPolynomial.from_terms([((0.0, 0.0), 1.0), ((2 * np.pi, 0.0), 0.3),
                                  ((-2 * np.pi, 0.0), 0.3)])
A0m = CoefficientField(np.eye(4), wave)
model = assemble_effective(disk, mesh, A0m, None, B0, None, ONE, ONE, keep_correctors=False)
voigt = A0m.sample_cells(mesh)[mesh.phase == SOLID].sum(axis=0) * mesh.cell_volume
print("stiffness 1 + 0.6 cos(2 pi y1) in the inclusion")
print(f"  C0[0,0] = {model.C0[0, 0]:.5f}  below Voigt {voigt[0, 0]:.5f}")
