"""Procedural textures used by tests, demos and the CLI examples.

``speckle_texture`` imitates a speckled desk surface: isolated two-scale
color dots on a flat base. Each dot is radially symmetric (so window
correlation survives in-image rotation between viewpoints) while its
core/halo color pair keeps neighborhoods distinctive. Dot placement uses
minimum-distance rejection so a correlation window sees at most one dot.
"""

import numpy as np


def smooth_texture(shape, rng, cells=8, contrast=0.35):
    """Band-limited noise: coarse random grid bilinearly upsampled."""
    h, w = shape
    ch = max(2, int(cells))
    cw = max(2, int(round(cells * w / h)))
    coarse = rng.random((ch, cw, 3))
    ys = np.linspace(0, ch - 1, h)
    xs = np.linspace(0, cw - 1, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, ch - 1)
    x1 = np.minimum(x0 + 1, cw - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    img = ((1 - fy) * (1 - fx) * coarse[y0][:, x0]
           + (1 - fy) * fx * coarse[y0][:, x1]
           + fy * (1 - fx) * coarse[y1][:, x0]
           + fy * fx * coarse[y1][:, x1])
    return 0.5 + contrast * (img - 0.5) * 2.0


def speckle_texture(shape, rng, spacing=22.0, base=0.5,
                    halo_sigma=(2.3, 3.0), core_sigma=(1.1, 1.4)):
    """Flat base with isolated two-scale isotropic color dots.

    Amplitudes stay inside the [0, 1] gamut so the dot profiles are never
    flattened by clipping.
    """
    h, w = shape
    img = np.full((h, w, 3), float(base))
    centers = []
    for _ in range(max(4000, 30 * h)):
        cy, cx = rng.uniform(3, h - 4), rng.uniform(3, w - 4)
        if all((cy - py) ** 2 + (cx - px) ** 2 >= spacing * spacing
               for py, px in centers):
            centers.append((cy, cx))
    for cy, cx in centers:
        sb = rng.uniform(*halo_sigma)
        sc = rng.uniform(*core_sigma)
        halo_dir = rng.normal(size=3)
        halo_dir /= np.linalg.norm(halo_dir)
        core_dir = rng.normal(size=3)
        core_dir /= np.linalg.norm(core_dir)
        amp_halo = rng.uniform(0.16, 0.2)
        amp_core = rng.uniform(0.27, 0.3)
        r = int(np.ceil(4 * sb))
        y0, y1 = max(0, int(cy) - r), min(h, int(cy) + r + 1)
        x0, x1 = max(0, int(cx) - r), min(w, int(cx) + r + 1)
        yy = np.arange(y0, y1)[:, None]
        xx = np.arange(x0, x1)[None, :]
        rr2 = (yy - cy) ** 2 + (xx - cx) ** 2
        img[y0:y1, x0:x1] += (
            np.exp(-rr2 / (2 * sb * sb))[:, :, None] * (amp_halo * halo_dir)
            + np.exp(-rr2 / (2 * sc * sc))[:, :, None] * (amp_core * core_dir))
    return np.clip(img, 0.0, 1.0)
