"""A walk through the sparse engine: voxelize a cloud, build kernel maps, convolve.

Run:  python demos/sparse_conv_tour.py
"""
import numpy as np

from tenext import autograd as ag
from tenext.data import SceneSpec, gen_synthetic_scene
from tenext.layers import SparseConv, TeNextBlock
from tenext.sparse import ones_features, quantize

scene = gen_synthetic_scene(0, SceneSpec(n_points=8000))
x = ones_features(quantize(scene.points, scale=0.2))
print(f"{len(scene)} points -> {len(x.coords)} voxels at 0.2 m")

# Kernel maps pair input and output rows per tap. For a stride-1 map the
# centre tap is the identity and the others only pair real neighbours.
km = x.manager.kernel_map(x.map_key, x.map_key, 3)
sizes = [len(r) for r in km.in_rows]
print(f"3x3x3 map: {len(sizes)} taps, centre tap {sizes[13]} pairs, mean off-centre {np.mean(sizes[:13] + sizes[14:]):.0f}")

# Down, then back up. The transposed conv lands exactly on the stored fine map.
down = SparseConv(1, 8, 2, stride=2)(x)
up = SparseConv(8, 4, 2, stride=2, transposed=True)(down)
print(f"stride-2 map: {len(down.coords)} voxels; transposed back: {len(up.coords)} rows, "
      f"same coordinates: {np.array_equal(up.coords, x.coords)}")

# A residual block keeps the coordinate set and row order.
h = SparseConv(1, 16, 3)(x)
y = TeNextBlock(16, kernel_size=7)(h)
print(f"TeNextBlock 16->16 (mid width {16 // 4}): output {y.F.shape}, coords preserved: "
      f"{np.array_equal(y.coords, x.coords)}")

# Gradients come from the same tape used in training.
conv = SparseConv(1, 16, 3)
z = TeNextBlock(16, kernel_size=3)(conv(x))
ag.sum_all(z.feats).backward()
print(f"d loss / d first-conv weights: shape {conv.weight.grad.shape}, norm {np.linalg.norm(conv.weight.grad):.3f}")
