"""
The full experiment in one call
===============================

Generate data, train the baseline, score, search the informative proportion,
train the entropy model, evaluate both and export figure data. A reduced
budget keeps this to a few seconds; drop the overrides for the full run.
"""

import json
import tempfile
from pathlib import Path

from entropy_select.bayesopt import BOConfig
from entropy_select.classifier import TrainConfig
from entropy_select.pipeline import RunConfig, run_pipeline

config = RunConfig(train=TrainConfig(stage_a_epochs=60, stage_b_epochs=20), bo=BOConfig(total_calls=12, random_starts=5))
with tempfile.TemporaryDirectory() as tmp:
    manifest = run_pipeline(config, tmp)
    print(f"IP = {manifest['informative_proportion']:.4f}, counts = {manifest['counts']}")
    metrics = json.loads((Path(tmp) / "reports/metrics.json").read_text())
    for key, c in metrics["comparisons"].items():
        print(f"{key:<36} recall {c['value1']:.3f} -> {c['value2']:.3f}  Z={c['z']:+.2f}  p={c['p']:.3f}")
    print(sorted(p.name for p in (Path(tmp) / "figures").iterdir())[:6], "...")
