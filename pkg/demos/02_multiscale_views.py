"""Build multi-scale views of a window and inspect the token bookkeeping.

Shows the chained average pooling, the concatenated token layout, the
time-span alignment between adjacent scales, and the repeat/pool algebra
the cross-scale aggregators rely on.
"""

import numpy as np

from mstune import (
    Rng,
    ScaleSpec,
    Tensor,
    build_alignment,
    build_multiscale_set,
    build_scale_index_map,
    token_avgpool,
    token_repeat,
    upsample_prediction,
)

C, H, P, K, S = 96, 96, 16, 2, 2

context = Rng(0).normal((C,))
horizon = Rng(1).normal((H,))
ms = build_multiscale_set(context, horizon, H, ScaleSpec(K, S))
print("scale lengths (context, horizon):",
      list(zip(ms.context_lens, ms.horizon_lens)))

counts = [(-(-c // P), -(-h // P)) for c, h in zip(ms.context_lens, ms.horizon_lens)]
index_map = build_scale_index_map(counts)
for i, span in enumerate(index_map.spans):
    print(f"scale {i}: context tokens [{span.ctx_start},{span.ctx_stop}) "
          f"horizon tokens [{span.hor_start},{span.hor_stop})")
print("total tokens:", index_map.n_total)

align = build_alignment(ms.context_lens, ms.horizon_lens, P, S)
print("fine->coarse map, scales 0->1, context:",
      align.pairs[0].context.fine_to_coarse.tolist())

# duplicate coarse rows to the fine grid, then pool back: identity
x = Rng(2).normal((align.pairs[0].n_coarse, 4))
round_trip = token_avgpool(token_repeat(Tensor(x), align.pairs[0]),
                           align.pairs[0]).data
print("avgpool(repeat(x)) == x:", np.array_equal(round_trip, x))

# a coarse forecast mapped back to the original resolution
coarse = ms.horizons[2][:6]
print("scale-2 forecast  ", np.round(coarse, 2))
print("upsampled to H=96 ", np.round(upsample_prediction(coarse, S, 2, 24), 2))
