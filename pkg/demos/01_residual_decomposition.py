"""Split a frame into a low-resolution image and its high-frequency residual.

The residual is what lets a low-resolution result be made sharp again: any
frame is exactly ``upsample(downsample(f)) + residual``.  Push-pull fill is
the diffusion used for pixels no reference can see.
"""
import numpy as np

from strav import synthgen
from strav.pyramid import decompose, push_pull_fill

seq = synthgen.generate(synthgen.get_suite("pan").spec(seed=0, low_size=(64, 64), frames=1))
f = seq.ground_truth[0]
for s in (2, 4, 8):
    d = decompose(f, s)
    err = np.abs(d.reconstruct() - f).max()
    print(f"s={s}: low {d.low.shape}, residual energy {np.abs(d.residual).mean():.4f}, reconstruction err {err:.1e}")

m = seq.masks[0]
filled = push_pull_fill(seq.frames[0], m)
print(f"push-pull fill: outside-hole change {np.abs(filled - seq.frames[0])[m == 0].max():.1e}, "
      f"hole mean {filled[m > 0].mean():.3f} vs ground truth {f[m > 0].mean():.3f}")
