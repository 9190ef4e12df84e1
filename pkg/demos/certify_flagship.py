#!/usr/bin/env python
# coding: utf-8

# In[ ]:


# Sampled certification of a barrier for the square-root diffusion
# dX = (2 - X) dt + sqrt(X) dW with psi(x) = x^0.5 exp(-0.5 x).
import numpy as np

from ergodens import expr as ex
from ergodens import operators as ops
from ergodens.barrier import make_power_exp_barrier
from ergodens.certify import certify_outside_cube, minimal_cube, search_parameters
from ergodens.model import CompactCube, build_affine

m = build_affine(1, [2.0], mu_diag=[1.0], sigma_diag=[1.0])
b = make_power_exp_barrier(1, 0.5, 0.5)
print(ex.to_text(b.psi))


# In[ ]:


# the second condition is a constant for this family: gamma sigma^2 - mu1
y = np.geomspace(1e-6, 1e4, 9)[None, :]
print(np.broadcast_to(ex.evaluate(ops.condition2_expr(m, b), y), y.shape[1:]))

# the first one changes sign twice, which is what fixes the cube
print(ex.evaluate(ops.condition1_margin_expr(m, b), y))


# In[ ]:


# the smallest sampled cube, with and without the strengthened barriers x^2 psi
print(minimal_cube(m, b, assumption3=False))
print(minimal_cube(m, b, assumption3=True))


# In[ ]:


cert = certify_outside_cube(m, b, CompactCube([0.1], [12.0]))
print(cert.status, cert.gronwall_C)
for name, c in cert.conditions.items():
    print(f"{name:28s} worst {c.worst: .4g} at {c.witness}")


# In[ ]:


# too much mass pushed toward zero: beta above 2 mu0 / sigma^2 - 1 = 3
bad = certify_outside_cube(m, make_power_exp_barrier(1, 3.5, 0.5), CompactCube([0.1], [12.0]))
print(bad.status, bad.conditions["condition1"])


# In[ ]:


# or let the Halton search pick beta and gamma
found = search_parameters(m, "power_exp", {"beta": (0.05, 2.0), "gamma": (0.05, 1.5)},
                          budget=15, cube=CompactCube([0.1], [12.0]))
print(found.barrier, found.status, found.gronwall_C)
