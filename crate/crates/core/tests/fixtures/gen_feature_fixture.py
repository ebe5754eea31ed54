"""Reference computation of the 11 slide-level heatmap features for the toy fixture.

Independent of the Rust implementation: uses scipy.ndimage for 8-connected
labelling and numpy's symmetric eigen-solver for the major axis.
"""
import json

import numpy as np
from scipy import ndimage

T = 0.9

hm = np.zeros((8, 8), dtype=np.float32)
tissue = np.ones((8, 8), dtype=bool)
tissue[0, :] = False
tissue[:, 0] = False

cells = {
    # L-shaped region of five cells
    (2, 2): 0.953125, (2, 3): 0.921875, (2, 4): 0.90625, (3, 4): 0.96875, (4, 4): 0.9375,
    # diagonal pair, joined only under 8-connectivity
    (6, 1): 0.984375, (7, 2): 0.9375,
    # lone cell just above the threshold
    (5, 7): 0.90625,
    # sub-threshold tissue
    (1, 1): 0.5, (3, 6): 0.875, (4, 2): 0.25, (7, 7): 0.125, (5, 5): 0.890625,
}
for (r, c), v in cells.items():
    assert tissue[r, c]
    hm[r, c] = v

vals = hm.astype(np.float64)
labels, n = ndimage.label(vals >= T, structure=np.ones((3, 3), dtype=int))

regions = []
for k in range(1, n + 1):
    rr, cc = np.nonzero(labels == k)
    p = vals[rr, cc]
    coords = np.stack([rr, cc]).astype(np.float64)
    cov = np.cov(coords, bias=True) if len(rr) > 1 else np.zeros((2, 2))
    lam = np.linalg.eigvalsh(cov).max()
    first = min(zip(rr, cc))
    regions.append(dict(area=len(rr), max=p.max(), mean=p.mean(),
                        axis=4.0 * np.sqrt(max(lam, 0.0)), first=first))

regions.sort(key=lambda g: (-g["area"], -g["max"], g["first"]))
big = regions[0]
tv = vals[tissue]
n_tissue = int(tissue.sum())
n_back = tissue.size - n_tissue

features = [
    big["axis"], big["max"], big["mean"], float(big["area"]),
    float(np.mean([g["mean"] for g in regions])),
    float(sum(g["area"] for g in regions)),
    float(tv.max()), float(tv.mean()), float(len(regions)),
    float(n_tissue), n_tissue / n_back,
]

out = dict(
    threshold=T,
    heatmap=hm.astype(float).tolist(),
    tissue=tissue.astype(int).tolist(),
    features=[float(f) for f in features],
)
with open("toy_heatmap_8x8.json", "w") as fh:
    json.dump(out, fh, indent=1)
    fh.write("\n")
print(json.dumps(out["features"]))
