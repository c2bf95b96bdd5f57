# %% [markdown]
# # Is vote confidence informative?
#
# With no logit noise the policy's answer distribution is exactly what
# generated the data, so a pseudo-label's vote share should track how often it
# is right. We bin 2000 labels by confidence and fit a line through the bins.

# %%
import numpy as np

from ttrl.analysis import bin_confidence_accuracy, fit_regression
from ttrl.env import generate_dataset
from ttrl.evaluation import correctness_flags
from ttrl.policy import init_policy
from ttrl.trainer import TrainConfig, run_pseudo_label_phase

dataset = generate_dataset(2000, 4, 0.5, seed=0)
policy = init_policy(dataset, 4.0, seed=0)
labels = [lq.label for lq in run_pseudo_label_phase(policy, dataset.views(), TrainConfig(m_votes=64))]
flags = correctness_flags(labels, dataset)

# %%
bins = bin_confidence_accuracy([lab.confidence for lab in labels], flags)
for b in bins:
    if b.count:
        bar = "#" * int(40 * b.mean_accuracy)
        print(f"({b.lower:.2f}, {b.upper:.2f}]  n={b.count:4d}  acc={b.mean_accuracy:.2f}  {bar}")

summary = fit_regression(bins)
print(f"slope {summary.slope:.2f}, intercept {summary.intercept:.2f}, r {summary.pearson_r:.3f}")
print("overall label accuracy:", np.mean(flags))
