"""
Full-scale shapes without the memory bill
=========================================

Building the full-scale model on the ``meta`` device runs every layer's
shape logic while allocating nothing, which is enough to follow a batch
through backbone, transformers and the temporal-convolution head.
"""
import torch

from spotfast import config as C
from spotfast.model import SpotFastLipreader
from spotfast.tcback import stack_length

for w in (15, 19, 23):
    cfg = C.paper_config(window_size=w)
    bb = cfg.model.backbone
    with torch.device("meta"):
        model = SpotFastLipreader(cfg.model)
        model.use_transformer = True
        clip = torch.empty(2, bb.in_channels, bb.num_frames, bb.input_size, bb.input_size)
        spot, fast = model.features(clip)
        logits = model(clip)
    print(f"window {w}: spot {tuple(spot.shape)} fast {tuple(fast.shape)} "
          f"tc lengths {stack_length(w, 3)}/{stack_length(29, 5)} logits {tuple(logits.shape)}")

# %%
# The classifier sees four times each pathway's width.
print(model.head.classifier)
