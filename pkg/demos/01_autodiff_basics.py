"""
Reverse-mode differentiation on a tape
======================================

Every training computation in this package runs on a small tape: forward
ops record their adjoint closures, backward replays them in reverse.
This walkthrough builds a tiny expression, asks for gradients, and
verifies one of them against a central finite difference.
"""

import numpy as np

from regioncontrast.autodiff import Tape, Tensor, add, exp, matmul, mul, relu, sum_all

# A tape owns the recorded operations. Tensors wrap float64 numpy arrays.
tape = Tape()
x = Tensor(np.array([[0.5, -1.0], [2.0, 0.25]]))
w = Tensor(np.array([[1.0, 0.0], [0.3, -0.7]]))

# y = sum(relu(x @ w) * exp(x)) combines a few op kinds
h = relu(tape, matmul(tape, x, w))
y = sum_all(tape, mul(tape, h, exp(tape, x)))
print("forward value:", y.values)

tape.backward(y)
print("dy/dx:\n", x.grad)
print("dy/dw:\n", w.grad)

# Check dy/dw[0,0] numerically. Two fresh forward passes, one knob moved.
def forward(w00):
    t = Tape()
    xv = Tensor(x.values)
    wv = w.values.copy()
    wv[0, 0] = w00
    hh = relu(t, matmul(t, xv, Tensor(wv)))
    return sum_all(t, mul(t, hh, exp(t, xv))).values

eps = 1e-6
fd = (forward(1.0 + eps) - forward(1.0 - eps)) / (2 * eps)
print("finite difference dy/dw[0,0]:", fd)
print("tape gradient        same entry:", w.grad[0, 0])
assert abs(fd - w.grad[0, 0]) < 1e-8

# Gradients accumulate: reusing a tensor twice adds both contributions.
tape2 = Tape()
a = Tensor(3.0)
twice = add(tape2, mul(tape2, a, a), a)   # a^2 + a, derivative 2a + 1
tape2.backward(twice)
print("d(a^2 + a)/da at a=3:", a.grad, "(expected 7)")
