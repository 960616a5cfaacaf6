"""
The reverse-mode engine in a few lines
======================================

Every operation records its inputs and a backward rule; ``backward`` walks
the graph once in reverse topological order.  Gradients come back in a map
keyed by tensor identity, and anything unreachable reads as zeros.
"""

from __future__ import annotations

import numpy as np

from velc import diffengine as de

x = de.parameter([1.0, -2.0, 0.5])
w = de.parameter([[0.3], [0.1], [-0.4]])

# y = sum(tanh(x @ w)^2): a matmul, an elementwise op and a reduction
y = de.sum(de.square(de.tanh(de.matmul(de.reshape(x, (1, 3)), w))))
grads = de.backward(y)
print("y       ", y.item())
print("dy/dx   ", grads[x])
print("dy/dw   ", grads[w].ravel())

# Central differences agree to about 1e-9 relative error.
err = de.finite_diff_check(lambda t: de.sum(de.square(de.tanh(de.matmul(de.reshape(t, (1, 3)), w)))), x.data)
print("finite-difference relative error", err)

# Reused subexpressions accumulate: d/dx of u*u + u with u = 3x is 18x + 3.
u = de.scale(x, 3.0)
print("fan-out gradient", de.backward(de.sum(u * u + u))[x], "expected", 18 * x.data + 3)

# Inside no_grad nothing is recorded, which is how scoring runs.
with de.no_grad():
    z = de.exp(x)
print("recorded under no_grad:", z.requires_grad)

# Domain problems are raised, never silently turned into NaN.
try:
    de.log(de.constant(np.array([1.0, 0.0])))
except de.DomainError as exc:
    print("DomainError:", exc)
