"""
How the constraint network rewrites a latent vector
===================================================

A latent vector is compared with every row of the constraint matrix by
cosine similarity.  The similarities are normalized, the small ones are
zeroed, and the survivors mix the rows back into a new latent.  Anything the
rows cannot express is lost, which is what makes out-of-distribution inputs
hard to reconstruct.
"""

from __future__ import annotations

import numpy as np

from velc import diffengine as de
from velc.constraint import ConstraintMatrix, address_weights, constrain

# Three rows in a 3-d latent space: two nearly aligned, one orthogonal.
C = np.array([
    [1.0, 0.0, 0.0],
    [0.9, 0.1, 0.0],
    [0.0, 0.0, 1.0],
])
cm = ConstraintMatrix(de.parameter(C), ths=0.025)

z = de.constant([[2.0, 0.3, 0.0],     # close to the first two rows
                 [0.0, 1.0, 0.0],     # mostly outside the span of the rows
                 [-1.0, 0.0, -1.0]])  # points away from every row

aw = address_weights(z, cm)
np.set_printoptions(precision=3, suppress=True)
print("cosine weights after normalization\n", aw.w)
print("after the sparsity threshold\n", aw.w_hat)

z_tilde = constrain(z, cm).data
print("constrained latents\n", z_tilde)

# The second vector only overlaps with the second row.  Normalization makes
# that lone weight 1, so the output is the row itself regardless of how small
# the overlap was.  The third vanishes: every cosine is negative.
print("lost norm per vector:", np.linalg.norm(z.data - z_tilde, axis=1))

# Gradients flow to both the latent and the rows themselves.
zp = de.parameter(z.data[:1])
g = de.backward(de.sum(de.square(constrain(zp, cm))))
print("d/dz  ", g[zp])
print("d/dC\n", g[cm.C])
