"""
Scoring training samples by prediction entropy
==============================================

A baseline classifier is trained on the full training split; every training
sample then gets the entropy of its predicted class distribution. High
entropy marks samples the model is unsure about.
"""

import math

import numpy as np

from entropy_select.classifier import TrainConfig, train_two_stage
from entropy_select.dataset import SyntheticConfig, generate_synthetic, split_by_group
from entropy_select.entropy import entropy_gap_test, entropy_histogram, score_training_set, select_informative

data = generate_synthetic(SyntheticConfig(seed=2))
splits = split_by_group(data, seed=2)
model = train_two_stage(data, splits, TrainConfig(stage_a_epochs=100, stage_b_epochs=50))
print(f"best validation loss {model.best.validation_loss:.4f} (stage {model.best.stage}, epoch {model.best.epoch})")

table = score_training_set(model, data, splits.ids("train"))
print(f"entropy range [{table.entropy.min():.4f}, {table.entropy.max():.4f}], ceiling ln 2 = {math.log(2):.4f}")

informative, redundant, flagged = select_informative(table, 0.6)
print(f"kept {len(informative)}, dropped {len(redundant)}")

# Duplicates are over-represented among the dropped samples.
dup_share = lambda ids: data.is_duplicate[data.index_of(ids)].mean()
print(f"duplicate share: informative {dup_share(informative):.3f}, redundant {dup_share(redundant):.3f}")

gap = entropy_gap_test(flagged)
print(f"mean entropy redundant {gap.value1:.4f} vs informative {gap.value2:.4f}, Z = {gap.z:.1f}")

edges, counts = entropy_histogram(flagged, 10, "redundant")
print("redundant histogram:", np.round(counts, 3))
