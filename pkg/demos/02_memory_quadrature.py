"""Fading memory: the convolution quadrature behind every time step.

The solvers never form a memory integral directly; they call
``volterra_convolve`` on the stored history of a field. Here the kernel
``e^{-t}`` against ``g = 1`` has the exact value ``1 - e^{-1}`` at ``t = 1``,
and halving the step cuts the error by four.

    python demos/02_memory_quadrature.py
"""

import numpy as np

from viscohom import FieldHistory, volterra_convolve

exact = 1 - np.exp(-1)
prev = None
print("   dt        error      ratio")
for n in (8, 16, 32, 64, 128, 256):
    dt = 1 / n
    hist = FieldHistory(dt)
    for _ in range(n + 1):
        hist.append(np.ones(1))
    kernel = np.exp(-np.arange(n + 1) * dt)
    err = abs(volterra_convolve(kernel, hist, n)[0] - exact)
    ratio = "" if prev is None else f"{prev / err:8.3f}"
    print(f"  1/{n:<4d}  {err:.3e}  {ratio}")
    prev = err
