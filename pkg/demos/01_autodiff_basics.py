"""
Reverse-mode autodiff on dense tensors
======================================

The package ships its own float64 tape: operations record backward rules on
their outputs, and ``backward()`` on a scalar loss fills ``.grad`` on every
leaf. This script walks the core ops and checks one gradient against central
finite differences.
"""

import numpy as np

from meshfield.autograd import Tensor, cosine_sim, matmul

rng = np.random.default_rng(0)

# ---------------------------------------------------------------------------
# forward arithmetic looks like numpy
a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
hidden = matmul(a, w).tanh()
loss = (hidden * hidden).mean(axis=0).sum()
print("loss:", loss.item())

# ---------------------------------------------------------------------------
# one backward call populates every leaf gradient
loss.backward()
print("grad shapes:", a.grad.shape, w.grad.shape)

# ---------------------------------------------------------------------------
# spot-check against central differences (h = 1e-5)
h = 1e-5
i, j = 2, 1
w_plus = w.data.copy()
w_minus = w.data.copy()
w_plus[i, j] += h
w_minus[i, j] -= h


def loss_at(w_np):
    hid = np.tanh(a.data @ w_np)
    return float((hid * hid).mean(axis=0).sum())


numeric = (loss_at(w_plus) - loss_at(w_minus)) / (2 * h)
print(f"analytic dL/dw[{i},{j}] = {w.grad[i, j]:.10f}")
print(f"numeric  dL/dw[{i},{j}] = {numeric:.10f}")
assert abs(w.grad[i, j] - numeric) < 1e-8

# ---------------------------------------------------------------------------
# cosine similarity is the workhorse of the style loss
u = Tensor(rng.normal(size=16), requires_grad=True)
v = Tensor(rng.normal(size=16))
sim = cosine_sim(u, v)
sim.backward()
print("cosine similarity:", sim.item(), "| gradient norm:", np.linalg.norm(u.grad))
