"""Run the retarded scheme on shear waves and check the local energy balance."""
import numpy as np

from leslab.construction import (apriori_monitor, ball_test_function, local_energy_check,
                                 retarded_construct, shear_wave_field, un_vn_report)
from leslab.covers import build_cover

n, R, h = 10, 12, 0.5
c = build_cover("uloc", R)
st = retarded_construct(shear_wave_field(R, h, seed=0), c, n, K=2, gamma=0.5)
print(f"horizon T={st.T:.4f}  |u0|_M={st.u0_norm:.4f}  pieces={st.K}")
for row in un_vn_report(st, c)[0]:
    print(f"{row['id']:7s} measured={row['measured']:.4f} bound={row['bound']:g}")
mon = apriori_monitor(st.u_n, c, st.u0_norm)
print(f"a priori: measured C'={mon['C_prime_measured']:.3f} frozen C'={mon['C_prime']}")
for x in ((0, 0, 0), (5, 0, 0)):
    phi = ball_test_function(c, c.nearest_ball(np.array(x, float)), R, h)
    r, lhs = local_energy_check(st.u_n, st.p_n, phi, st.T, v=st.v_fun, w=st.w_n)
    print(f"ball at {x}: residual/LHS={r / lhs:.2e}")
