"""Grid-refinement table for the log energy of smooth circle densities.

For the density (1 + a cos t) / (2 pi) the exact value is -a^2 / 4, so the
printed error column shows the discretization error at each grid size.
"""

import sys

import numpy as np

from orbent.entropy import sigma_refinement


def main() -> int:
    for a in (0.0, 0.5, 0.9):
        exact = -a * a / 4
        print(f"a = {a}  exact = {exact:.10f}")
        for G, value in sigma_refinement(lambda t, a=a: (1 + a * np.cos(t)) / (2 * np.pi)):
            print(f"  G = {G:5d}  sigma = {value:.12f}  error = {abs(value - exact):.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
