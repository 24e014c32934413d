"""Independent scalar-loop reference implementations used by the tests."""
import numpy as np

from strav import losses as L
from strav.alignment import AlignedReference
from strav.losses import SequenceSample


def o_masked_l1(a, b, region):
    h, w = region.shape
    num = cnt = 0.0
    for i in range(h):
        for j in range(w):
            r = float(region[i, j])
            for c in range(3):
                num += r * abs(float(a[i, j, c]) - float(b[i, j, c]))
                cnt += r
    return 0.0 if cnt == 0 else num / cnt


def o_bin(m):
    return (np.asarray(m) > 0.5).astype(float)


def o_gram(f):
    h, w, c = f.shape
    g = np.zeros((c, c))
    for a in range(c):
        for b in range(c):
            s = 0.0
            for i in range(h):
                for j in range(w):
                    s += float(f[i, j, a]) * float(f[i, j, b])
            g[a, b] = s / (c * h * w)
    return g


def o_ycomb(y, x, m):
    out = np.zeros_like(y, dtype=np.float64)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            out[i, j] = m[i, j] * y[i, j] + (1 - m[i, j]) * x[i, j]
    return out


def o_mean_abs(a, b):
    a = np.asarray(a, np.float64).ravel()
    b = np.asarray(b, np.float64).ravel()
    return sum(abs(p - q) for p, q in zip(a, b)) / len(a)


def o_all(sample, refs, cvis, leftovers, xt):
    n = sample.n
    out = {}
    out["align"] = sum(
        o_masked_l1(x, a.frame, (1 - o_bin(m)) * (1 - o_bin(a.mask)))
        for x, m, rs in zip(sample.frames, sample.masks, refs) for a in rs
    ) / n
    out["vis"] = sum(o_masked_l1(y, g, o_bin(m) * c) for y, g, m, c in
                     zip(sample.outputs, sample.ground_truths, sample.masks, cvis)) / n
    out["leftover"] = sum(o_masked_l1(y, g, lo) for y, g, lo in zip(sample.outputs, sample.ground_truths, leftovers)) / n
    out["nonhole"] = sum(o_masked_l1(y, g, 1 - o_bin(m)) for y, g, m in
                         zip(sample.outputs, sample.ground_truths, sample.masks)) / n
    pc = st_ = 0.0
    for y, x, m, g in zip(sample.outputs, sample.frames, sample.masks, sample.ground_truths):
        fa = L.default_phi(o_ycomb(y, x, o_bin(m)).astype(np.float32))
        fb = L.default_phi(g)
        pc += sum(o_mean_abs(a, b) for a, b in zip(fa, fb)) / len(fa)
        st_ += sum(o_mean_abs(o_gram(a), o_gram(b)) for a, b in zip(fa, fb)) / len(fa)
    out["percep"] = pc / n
    out["style"] = st_ / n
    out["rec"] = sum(o_masked_l1(a, b, o_bin(lo)) + o_masked_l1(a, b, 1 - o_bin(lo))
                     for a, b, lo in zip(xt, sample.frames, leftovers)) / n
    lum = [sum(0.299 * f[i, j, 0] + 0.587 * f[i, j, 1] + 0.114 * f[i, j, 2]
               for i in range(f.shape[0]) for j in range(f.shape[1])) / (f.shape[0] * f.shape[1]) for f in xt]
    out["adv"] = -sum(lum) / n
    return out


def random_instance(rng, n=2, h=8, w=8, refs=2):
    f32 = lambda *s: rng.random(s).astype(np.float32)  # noqa: E731
    masks = [(rng.random((h, w)) > 0.6).astype(np.float32) for _ in range(n)]
    sample = SequenceSample([f32(h, w, 3) for _ in range(n)], masks, [f32(h, w, 3) for _ in range(n)],
                            [f32(h, w, 3) for _ in range(n)])
    aligned = [[AlignedReference(f32(h, w, 3), (rng.random((h, w)) > 0.7).astype(np.float32),
                                 np.ones((h, w), np.float32), k, "affine") for k in range(refs)] for _ in range(n)]
    cvis = [(rng.random((h, w)) > 0.5).astype(np.float32) for _ in range(n)]
    leftovers = [m * (1 - c) for m, c in zip(masks, cvis)]
    xt = [f32(h, w, 3) for _ in range(n)]
    return sample, aligned, cvis, leftovers, xt


def o_attention_transfer(weights, maps):
    r, h, w = weights.shape
    out = np.zeros(maps[0].shape)
    for i in range(h):
        for j in range(w):
            for k in range(r):
                out[i, j] += float(weights[k, i, j]) * maps[k][i, j].astype(np.float64)
    return out


def o_patch_transfer(src, region, att):
    """Score-weighted context patch sum written into ``region`` (no feathering)."""
    p = att.patch_size
    out = np.asarray(src, np.float64).copy()
    for j, (r, c) in enumerate(att.hole_patches):
        for y in range(p):
            for x in range(p):
                if region[r * p + y, c * p + x] <= 0.5:
                    continue
                acc = np.zeros(src.shape[2])
                for i, (cr, cc) in enumerate(att.context_patches):
                    acc += float(att.scores[j, i]) * src[cr * p + y, cc * p + x]
                out[r * p + y, c * p + x] = acc
    return out
