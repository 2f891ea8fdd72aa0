"""A tour of the reverse-mode autodiff core.

Builds a small computation graph on numpy arrays, runs backward(), and
cross-checks one gradient entry against a central finite difference.
"""

import numpy as np

from tabfusion.tensor import Tensor, layer_norm, matmul, softmax

rng = np.random.default_rng(0)

w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
x = Tensor(rng.standard_normal((2, 4)))


def loss_fn():
    h = layer_norm(matmul(x, w)).tanh()
    return (softmax(h, axis=-1) * h).sum()


loss = loss_fn()
loss.backward()
print(f"loss = {loss.item():.6f}")
print(f"dL/dw shape = {w.grad.shape}, |dL/dw| max = {np.abs(w.grad).max():.4f}")

# verify one coordinate numerically
h = 1e-5
old = w.data[1, 2]
w.data[1, 2] = old + h
up = loss_fn().item()
w.data[1, 2] = old - h
down = loss_fn().item()
w.data[1, 2] = old
numeric = (up - down) / (2 * h)
print(f"analytic dL/dw[1,2] = {w.grad[1, 2]:.8f}")
print(f"numeric  dL/dw[1,2] = {numeric:.8f}")
