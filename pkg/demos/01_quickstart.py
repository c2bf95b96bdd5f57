# %% [markdown]
# # Quickstart: adapting a toy policy without labels
#
# A synthetic multiple-choice test set, a base policy that is right a bit more
# than half the time, and one adaptation run. The only supervision is the
# policy's own majority vote.

# %%
from ttrl.analysis import StandardSetup
from ttrl.evaluation import OracleEvaluator, direct_inference_accuracy, pseudo_label_accuracy
from ttrl.trainer import TrainConfig, run_adaptation, run_pseudo_label_phase

setup = StandardSetup()
dataset, base = setup.make(seed=0)
print(f"{len(dataset)} questions, K={dataset.k}")
print("greedy accuracy of the base policy:", direct_inference_accuracy(base, dataset))

# %% [markdown]
# Stage 1 votes a pseudo-label per question from 64 samples. The trainer only
# ever sees `dataset.views()`, which carry no answers.

# %%
config = TrainConfig(steps=100, m_votes=64, g_rollouts=4, seed=0)
labeled = run_pseudo_label_phase(base, dataset.views(), config)
labels = [lq.label for lq in labeled]
print("pseudo-label accuracy (majority vote):", pseudo_label_accuracy(labels, dataset))
print("mean confidence:", sum(lab.confidence for lab in labels) / len(labels))

# %% [markdown]
# Stage 2: confidence-weighted group advantages, up to three sampling attempts
# per question, clipped policy-gradient steps. The evaluator is an oracle
# callback used for logging only.

# %%
result = run_adaptation(base, labeled, config, evaluator=OracleEvaluator(dataset))
for rec in result.metrics[::20] + [result.metrics[-1]]:
    print(f"step {rec.step:3d}  eval {rec.eval_accuracy:.3f}  collapsed {rec.collapse_count}  attempts {rec.attempts_histogram}")
print("adapted greedy accuracy:", direct_inference_accuracy(result.policy, dataset))
