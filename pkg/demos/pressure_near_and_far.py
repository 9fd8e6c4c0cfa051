"""Split a pressure-like potential into near and far parts and compare with FFT."""
import numpy as np

from leslab.covers import build_cover
from leslab.fields import from_function
from leslab.kernels import KernelKind, layer_masks, near_field_pv, spectral_riesz_oracle


def bump(X, Y, Z, r, x0=0.0):
    s = ((X - x0)**2 + Y**2 + Z**2) / r**2
    return np.where(s < 1, np.exp(-1 / np.maximum(1 - s, 1e-12)), 0.0)


R, h = 18, 0.25
c = build_cover("uloc", R)
base = c.nearest_ball(np.zeros(3))
f = from_function(R, h, lambda X, Y, Z: bump(X, Y, Z, 5.0) * bump(X, Y, Z, 4.5, 0.5))
masks = layer_masks(c, base, R, h)
for ij in ((0, 0), (0, 1), (2, 2)):
    kind = KernelKind.K(*ij)
    ref = spectral_riesz_oracle(f, kind).values[masks[0]]
    for corrected in (False, True):
        got = near_field_pv(f, kind, c, base, masks, corrected=corrected).values[masks[0]]
        err = np.linalg.norm(got - ref) / np.linalg.norm(ref)
        print(f"K{ij} corrected={corrected!s:5s} rel L2 error {err:.2e}")
