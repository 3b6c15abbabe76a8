"""Contrastive training on a small synthetic task.

Runs the two-phase trainer (shared encoder, then frozen passage encoder
with the memory bank) and prints the per-epoch log.  Small sizes keep this
demo around a minute; the acceptance suite runs the full-size experiment.
"""

from hopret import TrainConfig, generate_synthetic_task, train

corpus, train_set, dev_set = generate_synthetic_task(num_entities=40, num_relations=3, seed=11)
print(f"corpus={len(corpus)} passages, train={len(train_set)}, dev={len(dev_set)}")

config = TrainConfig(dimension=256, epochs=10, phase1_max_epochs=4, seed=11, eval_sample=60)
result = train(train_set, config, corpus=corpus, dev=dev_set)

for row in result.log["epochs"]:
    print(
        f"epoch {row['epoch']:>2} phase {row['phase']}: "
        f"train loss {row['train_loss']:6.3f}  dev loss {row['dev_loss']:6.3f}  "
        f"dev R@2 {row['dev_recall']:.3f}  bank {row['bank_size']}"
    )
print(f"\nselected checkpoint: {result.log['selected']}")
print(f"final dev R@2: {result.log['final_dev_recall']:.3f}")
print(f"model: dimension={result.model.dimension} phase={result.model.phase} "
      f"shared={result.model.shared}")
