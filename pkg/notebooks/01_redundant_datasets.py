"""
Redundant datasets and group-level splits
=========================================

Synthetic groups ("patients") contribute a skewed number of samples, and a
chosen share of samples are near-copies of another sample in the same group.
Splitting must keep each group in exactly one of train/validation/test.
"""

import numpy as np

from entropy_select.dataset import SyntheticConfig, generate_synthetic, split_by_group

config = SyntheticConfig(n_groups=300, duplicate_fraction=0.6, perturbation_sigma=0.05, seed=1)
data = generate_synthetic(config)
print(f"{len(data)} samples in {len(np.unique(data.group_id))} groups")
print(f"duplicates: {data.is_duplicate.mean():.3f} of all samples")

# A minority of groups holds a large share of the samples.
sizes = np.sort(np.bincount(data.group_id))[::-1]
top = sizes[: len(sizes) // 10].sum() / sizes.sum()
print(f"largest 10% of groups hold {top:.1%} of samples")

# Near-duplicates sit about sigma * sqrt(D) from their parent.
dup = np.flatnonzero(data.is_duplicate)
gap = np.linalg.norm(data.features[dup] - data.features[data.index_of(data.parent_id[dup])], axis=1)
print(f"mean duplicate-parent distance {gap.mean():.4f}")

splits = split_by_group(data, seed=1)
for name, frac in splits.achieved().items():
    print(f"{name:>10}: {frac:.3f}")
