"""Why projecting the prox is not enough.

For f(y) = y^T L y / 2 with off-diagonal coupling l12 and the box [-1, 1]^2,
the prox of f + iota_C is (clip(l12/2), 1) while P_C(prox_f) is (0, 1).
This prints both, plus the two iterative inner solvers, for a sweep of l12
and for the rotated variant.

    python demos/projection_mismatch.py
"""

import numpy as np

from nestedprox.counterexamples import QuadraticFormSpec, example_rotated_box, example_separable_box


def row(label, r):
    fmt = lambda v: "(" + ", ".join(f"{c:+.6f}" for c in v) + ")"
    print(f"{label:>8}  P_C prox_f {fmt(r.pc_prox)}  true {fmt(r.true_prox)}  "
          f"FB {fmt(r.fb_prox)}  DR {fmt(r.dr_prox)}  gap {r.gap:.3f}")


print("axis-aligned box")
for l12 in (-3.0, -1.0, 0.0, 0.5, 1.0, 2.5):
    row(f"{l12:+.1f}", example_separable_box(QuadraticFormSpec(l12, max(1.0, l12 * l12 + 1.0))))

print("\nrotated box")
for l12 in (0.1, 0.5, 1.0):
    row(f"{l12:+.1f}", example_rotated_box(l12))

gaps = [example_separable_box(QuadraticFormSpec(t, 1.0)).gap for t in np.linspace(-1, 1, 9)]
print("\ngap over l12 in [-1, 1]:", " ".join(f"{g:.3f}" for g in gaps))
