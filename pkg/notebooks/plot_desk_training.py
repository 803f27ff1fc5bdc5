"""
Training at desk scale
======================

A 10-word synthetic set, the desk preset and two short phases: the
backbone and head first, then the transformers with the backbone frozen.
"""
import dataclasses
import tempfile
from pathlib import Path

from spotfast import config as C
from spotfast.data import SyntheticSpec, generate_synthetic_dataset
from spotfast.model import build_model
from spotfast.train import ClipSet, evaluate, parameter_hash, run_phase

work = Path(tempfile.mkdtemp())
generate_synthetic_dataset(SyntheticSpec(10, 20, 29, 48, 48, seed=7, val_per_class=5), work / "data")
cfg = C.desk_config()
train = ClipSet.from_layout(work / "data", "train", cfg.preprocess)
val = ClipSet.from_layout(work / "data", "val", cfg.preprocess)
model = build_model(cfg.model, seed=0)
print("chance:", evaluate(model, val))

# %%
# Phase 1 trains everything except the transformers.
plan1 = dataclasses.replace(cfg.phases[0], epochs=3)
log = run_phase(model, plan1, train, work / "run", val)
print([r for r in log if r.get("event") == "epoch"][-1])

# %%
# Phase 2 resumes from the phase-1 checkpoint and leaves the backbone alone.
before = parameter_hash(model, "backbone")
plan2 = dataclasses.replace(cfg.phases[1], epochs=1)
log = run_phase(model, plan2, train, work / "run", val)
print([r for r in log if r.get("event") == "epoch"][-1])
print("backbone unchanged:", parameter_hash(model, "backbone") == before)
