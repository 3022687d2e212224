"""What the batch-norm gate does to a two-head attention layer.

Run: python demos/channel_exchange.py
"""

import numpy as np

from gotreid import graph as G

rng = np.random.default_rng(1)
d, K, heads = 8, 3, 2
params = G.GatParams.init(d, K, heads, rng)
per_head = rng.normal(size=(16, K + 1, heads, d // heads))

plain = G.channel_exchange(per_head, params, exchange=False).data
gated = G.channel_exchange(per_head, params).data
print("gammas start at 1, far above theta =", params.theta)
print("max |gated - plain| with no weak channel:", np.abs(gated - plain).max())

# Make channel 0 of head 1 at node 2 weak: its BN output is replaced by head 0's.
params.bn_gamma.data[2, 1, 0] = 0.01
plain = G.channel_exchange(per_head, params, exchange=False).data
gated = G.channel_exchange(per_head, params).data
print("\nafter forcing gamma[node 2, head 1, ch 0] = 0.01:")
print("  gated output equals head 0's normalised channel:",
      np.allclose(gated[:, 2, 1, 0], plain[:, 2, 0, 0], atol=1e-12))
changed = np.abs(gated - plain).max(axis=0) > 1e-12
print("  entries changed (node, head, ch):", np.argwhere(changed).tolist())

# The full layer: attention over the skeleton graph, exchange, weighted aggregation.
graph = G.build_adjacency(K, ((0, 1), (1, 2)))
layer = G.GraphAttention(graph, G.GatParams.init(d, K, heads, rng))
nodes = rng.normal(size=(4, K + 1, d))
emb = layer(nodes, nodes[:, K]).data
print("\nretrieval embedding shape for 4 samples:", emb.shape)
