"""Build the three cover families, validate them and watch the far sums settle."""
import numpy as np

from leslab.covers import build_cover, classify_growth, validate_cover
from leslab.estimates import far_sum_certificate, sample_bases

for kind in ("uloc", "dyadic", "axial"):
    c = build_cover(kind, 16)
    rep = validate_cover(c)
    print(f"{kind:7s} balls={len(c):5d} overlap={rep.max_intersections} "
          f"ratio={rep.worst_ratio:g} valid={rep.valid} growth={classify_growth(c).kind}")

# dyadic balls double in size with distance, so the weighted far sum has a finite limit
ref = build_cover("dyadic", 1024)
bases = sample_bases(ref, 5, seed=0)
for R in (1024, 2048, 4096):
    c = build_cover("dyadic", R)
    ids = [c.nearest_ball(ref.centers[b]) for b in bases]
    vals = [far_sum_certificate(c, i) for i in ids]
    print(f"R_max={R:5d} sup certificate={max(vals):.4e}")

# equal balls: the same sum converges too, but only like 1/R_max
for R in (20, 28, 40):
    c = build_cover("uloc", R)
    print(f"uloc R_max={R} certificate={far_sum_certificate(c, c.nearest_ball(np.zeros(3))):.4f}")
