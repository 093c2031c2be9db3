"""Continuum energy of the rotating-axis transition against its ramp length rho.

Prints rho, energy, rho * energy and the fitted log-log slope.
"""

import numpy as np

from chiralab.continuum import continuum_energy
from chiralab.geometry import E2, E3
from chiralab.profiles import zero_cost_profile

RHOS = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0)


def main() -> None:
    for z2, label in ((E2, "e3 -> e2"), (-E3, "e3 -> -e3")):
        energies = [continuum_energy(zero_cost_profile(E3, z2, rho, h=1e-3)) for rho in RHOS]
        print(label)
        for rho, e in zip(RHOS, energies):
            print(f"  rho={rho:5.1f}  energy={e:.6f}  rho*energy={rho * e:.4f}")
        slope = np.polyfit(np.log(RHOS[1:]), np.log(energies[1:]), 1)[0]
        print(f"  slope (rho >= 4): {slope:.4f}")


if __name__ == "__main__":
    main()
