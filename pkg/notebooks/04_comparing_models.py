"""
Confidence intervals and recall comparisons
===========================================

Exact binomial intervals for recall, and a Z test built from two reported
intervals by treating each as a 95% normal interval.
"""

from entropy_select.stats import ConfusionMatrix, clopper_pearson, compare_recall, metric_report, recall_with_ci

baseline = ConfusionMatrix(tp=87, fp=40, tn=260, fn=249)
entropy = ConfusionMatrix(tp=107, fp=52, tn=248, fn=229)
for name, cm in (("baseline", baseline), ("entropy", entropy)):
    r = metric_report(cm, threshold=0.5)
    print(f"{name:>8}: recall {r.recall:.4f} precision {r.precision:.4f} F {r.f_score:.4f} MCC {r.mcc:.4f}")

print("CP interval for 0 of 10:", clopper_pearson(0, 10))

r1, ci1 = recall_with_ci(baseline)
r2, ci2 = recall_with_ci(entropy)
c = compare_recall(r1, ci1, r2, ci2)
print(f"delta recall {c.delta:.4f}, Z = {c.z:.3f}, p = {c.p:.4f}, significant: {c.significant}")
