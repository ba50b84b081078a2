"""Free relaxation of the system spin for weak and strong coupling.

Run with ``python3 demos/relaxation.py [L]``; the default L = 5 (N = 11) runs in seconds.
"""
import sys

from stiffwork.model import ModelSpec, build_observable, build_static_hamiltonian
from stiffwork.relaxation import relax_trajectory, relaxation_time
from stiffwork.spectral import preset_fit_window
from stiffwork.state_prep import EnergyWindow, product_state

L = int(sys.argv[1]) if len(sys.argv) > 1 else 5
for kappa, t_max in ((0.2, 300.0), (0.6, 30.0)):
    spec = ModelSpec.ladder(L, kappa=kappa).with_sector(-0.5)
    h0 = build_static_hamiltonian(spec)
    sz = build_observable(spec, "sz_sys")
    E0 = 0.5 * sum(preset_fit_window("ladder", spec.N))
    prep = product_state(spec, EnergyWindow(E0 - 0.5 * spec.B, 0.3), "up", 0)
    fit = relaxation_time(relax_trajectory(h0, prep, t_max, sz))
    print(f"kappa = {kappa}: tau_R = {fit.tau_R:.2f}, long-time <S^z_sys> = "
          f"{fit.long_time_average:+.4f}, fit residual = {fit.residual:.3f}")
