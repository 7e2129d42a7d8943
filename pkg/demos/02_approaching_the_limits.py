"""
Approaching K = 0 and L = infinity
==================================

The coupled model contains the Dirichlet-type (``K = 0``) and the
no-exchange (``L = inf``) models as limits.  Sweeping the parameter and
fitting a power law to the mismatch shows how fast the limit is approached on
a fixed mesh.  The theory only bounds the mismatch by a square-root law; on a
fixed discretisation the measured decay is typically linear.
"""
from bulksurface_ch import limit_sweep, reference_setup

base = reference_setup(resolution=10, T_final=0.05, dt=1e-3)

for direction, values in [("K_to_0", [1.0, 1e-1, 1e-2, 1e-3]), ("L_to_inf", [1.0, 1e1, 1e2, 1e3])]:
    res = limit_sweep(direction, values, base)
    print(direction)
    for p, q in zip(res.parameter_values, res.quantity_values):
        print(f"   {p:8.0e}   {q:.4e}")
    print(f"   fitted slope {res.fitted_slope:+.3f}, square-root bound {res.expected_slope:+.1f}\n")
