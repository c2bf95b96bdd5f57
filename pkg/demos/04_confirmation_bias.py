# %% [markdown]
# # A failure mode: amplifying a shared bias
#
# Self-training rewards agreement with the policy's own vote. If the policy
# leans toward one option for every question, and the test answers are
# balanced, the votes inherit that lean and adaptation sharpens it. Compare
# with the standard setup, where the test split is skewed in a direction the
# base policy does not know about and the votes carry useful signal.

# %%
import numpy as np

from ttrl.env import generate_dataset
from ttrl.evaluation import direct_inference_accuracy
from ttrl.policy import init_policy
from ttrl.trainer import TrainConfig, run_adaptation, run_pseudo_label_phase

config = TrainConfig(steps=100, seed=0)
dataset = generate_dataset(200, 4, 1.0, seed=0)
prior = np.array([1.0, 0.0, 0.0, 0.0])  # every question leans toward "A"
biased = init_policy(dataset, 4.0, seed=0, label_prior=prior, noise_scale=1.0)

labeled = run_pseudo_label_phase(biased, dataset.views(), config)
share_a = np.mean([lq.label.answer == "A" for lq in labeled])
print(f"share of pseudo-labels that are 'A': {share_a:.2f} (true share {np.mean([q.latent_truth == 0 for q in dataset.questions]):.2f})")

# %%
result = run_adaptation(biased, labeled, config)
print("greedy accuracy before:", direct_inference_accuracy(biased, dataset))
print("greedy accuracy after: ", direct_inference_accuracy(result.policy, dataset))
