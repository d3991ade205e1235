"""
Reverse-mode gradients with a recorded tape
===========================================

Build a small loss on a tape, pull gradients back through it and compare
them with central differences.
"""

import numpy as np

from cornet import numcore as nc

rng = np.random.default_rng(0)

# Leaves are named so gradients come back keyed by the same names.
rec = nc.ComputationRecord()
w = rec.leaf("w", rng.standard_normal((3, 2)))
b = rec.leaf("b", np.zeros(2))
x = rng.standard_normal((5, 3))

# An affine map, a squashing nonlinearity and a scalar reduction.
loss = nc.mean(nc.square(nc.sigmoid(nc.affine(x, w, b))))
grads = nc.backward(rec, loss)
print("loss", loss.item())
print("dL/dw\n", grads["w"].data)

# Replaying the tape with the same leaf values reproduces every node.
replayed = rec.replay()
print("replay matches:", replayed[-1].tobytes() == loss.data.tobytes())

# The checker rebuilds the loss from a dict of leaves.
params = {"w": w.data, "b": b.data}
err = nc.grad_check(lambda p: nc.mean(nc.square(nc.sigmoid(nc.affine(x, p["w"], p["b"])))), params)
print(f"max relative gradient error {err:.2e}")

# A few adaptive-moment steps on the same loss.
state = nc.OptimizerState.for_params(params, lr=0.05)
for step in range(5):
    rec = nc.ComputationRecord()
    leaves = {k: rec.leaf(k, v) for k, v in params.items()}
    loss = nc.mean(nc.square(nc.sigmoid(nc.affine(x, leaves["w"], leaves["b"]))))
    params, state = nc.optimizer_step(params, nc.backward(rec, loss), state)
    print(f"step {state.step}: loss {loss.item():.5f}")
