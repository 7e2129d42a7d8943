"""
A diffuse interface on the disk, stirred by a rotation
=======================================================

A tanh-shaped disk of one phase sits off-centre in the unit disk.  The
boundary carries its own phase field ``psi``, coupled to the bulk trace
through the penalty parameter ``K`` and exchanging chemical potential through
``L``.  We rotate the whole picture rigidly and watch the energy, the mass and
the energy balance step by step.
"""
import numpy as np

from bulksurface_ch import CouplingParams, TriState, mass_drift, reference_setup
from bulksurface_ch.diagnostics import telescoped_gap

# a thin interface; with eps = 1 the blob would simply diffuse away
params = CouplingParams(K=TriState.finite(1.0), L=TriState.finite(1.0), eps=0.05, eps_surf=0.05)
setup = reference_setup(resolution=16, params=params, velocity="rotation", T_final=0.5, dt=2e-3,
                        r0=0.35, width=0.07, center=(0.3, 0.0))
print(f"{setup.mesh.n_bulk} bulk and {setup.mesh.n_surf} surface vertices")

traj = setup.run(snapshot_stride=50)

# Energy can only grow through the convective work, and rotation of a
# shifted blob does work, so the sequence need not be monotone.  The balance
# residual, however, stays nonpositive.
print("     t      energy    dissipation   exchange   residual")
for r in traj.records[::25]:
    print(f"{r.t:6.3f}  {r.energy:10.6f}  {r.dissipation_bulk + r.dissipation_surf:11.4e}  "
          f"{r.exchange:9.3e}  {r.energy_ineq_residual:10.3e}")

combined, (bulk, surf) = mass_drift(traj, params)
print(f"combined mass drift {combined:.2e}; bulk {bulk:.2e} and surface {surf:.2e} trade mass")
print(f"energy balance closes to {telescoped_gap(traj.records, traj.dt):.2e}")

# The blob shrinks, since a small droplet is not a minimiser, and its
# centre creeps round with the flow.
for s in traj.states:
    inside = s.phi > 0
    c = setup.mesh.vertices[inside].mean(axis=0)
    print(f"t = {s.t:5.3f}: {inside.sum():3d} vertices inside, centre at angle "
          f"{np.degrees(np.arctan2(c[1], c[0])):5.2f} deg")
