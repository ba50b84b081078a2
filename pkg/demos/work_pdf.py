"""Work pdf of the weakly driven ladder and its Jarzynski average.

Run with ``python3 demos/work_pdf.py [L]``; L = 5 (N = 11) takes well under a minute.
"""
import sys

import numpy as np

from stiffwork.model import ModelSpec, build_drive_operator, build_static_hamiltonian, eigensystem
from stiffwork.propagator import DriveProtocol
from stiffwork.spectral import dos_exact, fit_exponential, preset_fit_window
from stiffwork.state_prep import EnergyWindow
from stiffwork.work_stats import jarzynski_estimate, work_pdf

L = int(sys.argv[1]) if len(sys.argv) > 1 else 5
spec = ModelSpec.ladder(L, kappa=0.2)
h0, v, eig = build_static_hamiltonian(spec), build_drive_operator(spec), eigensystem(spec)
win = preset_fit_window("ladder", spec.N)
fit = fit_exponential(dos_exact(eig), win)
E0 = 0.5 * sum(win)
p = work_pdf(h0, v, DriveProtocol(0.26, 0.5, 13), EnergyWindow(E0, 0.1), 0.1, eig=eig, dt=0.05)

print(f"N = {spec.N}, beta = {fit.beta:.3f}, window states = {p.meta['n_window']}")
print(f"<W> = {p.mean():.4f}, <exp(-beta W)> = {jarzynski_estimate(p, fit.beta).value:.4f}")
top = p.density.max()
for W, d in zip(p.w_grid, p.density):
    if d > 0.01 * top:
        print(f"{W:+6.2f}  {'#' * int(50 * d / top)}")
