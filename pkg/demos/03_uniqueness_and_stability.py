"""
Continuous dependence on the initial data
=========================================

With constant mobilities two runs started a distance ``delta`` apart stay
within ``C delta`` of each other, measured in the dual norm the elliptic
module provides.  ``delta = 0`` is a uniqueness check: the runs must agree
bit for bit.
"""
from bulksurface_ch import continuous_dependence, reference_setup

base = reference_setup(resolution=12, T_final=0.03, dt=1e-3)
for mode in ("initial_data", "velocity"):
    table = continuous_dependence(base, [0.0, 1e-4, 1e-3, 1e-2], mode)
    print(mode)
    for d, m, same in zip(table.deltas, table.max_difference, table.identical):
        print(f"   delta {d:7.0e}   max difference {m:.4e}   {'identical' if same else ''}")
    print(f"   slope {table.slope:.4f}\n")
