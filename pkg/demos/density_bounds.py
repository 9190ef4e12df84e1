#!/usr/bin/env python
# coding: utf-8

# In[ ]:


# Forward equation on a geometric grid: h = rho / psi stays bounded in time,
# and a concentrated start spreads like t^(-1/2) in one dimension.
import numpy as np

from ergodens.barrier import make_power_exp_barrier
from ergodens.fpe import (assemble_forward_operator, barrier_density, dirac_shorttime_run, evolve,
                          grid_for_cube, plateau_verdict, sup_error)
from ergodens.model import CompactCube, build_affine
from ergodens.oracle import CirParams, cir_stationary_density, cir_transition_density

m = build_affine(1, [2.0], mu_diag=[1.0], sigma_diag=[1.0])
b = make_power_exp_barrier(1, 0.5, 0.5)
grid = grid_for_cube(CompactCube([0.1], [12.0]), nodes=400)
op = assemble_forward_operator(m, grid)


# In[ ]:


tr, final = evolve(op, barrier_density(grid, b), 0.01, 20.0, b, trace_stride=50)
arr = tr.arrays()
for t, s, l2, l16 in zip(arr["time"], arr["sup_h"], arr["l2_h"], arr["l16_h"]):
    print(f"t={t:5.1f}  sup h {s:.4f}  L2 {l2:.4f}  L16 {l16:.4f}")
print(plateau_verdict(tr))


# In[ ]:


# by t = 20 the field sits on the Gamma(4, 2) density
exact = cir_stationary_density(CirParams(2.0, 1.0, 1.0), grid.axes[0])
print(sup_error(final, exact))


# In[ ]:


rep = dirac_shorttime_run(op, [1.0], 0.25, 1e-3, b)
t = np.asarray(rep.trace.times)
for k in np.searchsorted(t, [0.05, 0.1, 0.2, 0.5, 1.0]):
    print(f"t={t[k]:.2f}  sup h * t^0.5 = {rep.scaled[k]:.4f}")
print(rep.passed, rep.edge_ratio)


# In[ ]:


ref = cir_transition_density(CirParams(2.0, 1.0, 1.0), 1.0, 1.0, grid.axes[0])
print(sup_error(rep.final, ref))
