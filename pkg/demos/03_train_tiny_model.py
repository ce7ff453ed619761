"""Train a tiny masked-token model for half a minute and watch it learn.

Builds a small synthetic corpus, prepares shards, then runs the budgeted
trainer: throughput calibration, schedule planning, sparse-prediction
forward/backward with gradient accumulation, eval cadence, checkpointing.
"""

import tempfile
from pathlib import Path

import numpy as np

from budgetlm import Trainer
from budgetlm.prepare import prepare_corpus
from budgetlm.sweep import parse_metrics
from budgetlm.synthcorpus import generate_corpus
from budgetlm.vocab import load_vocab

root = Path(tempfile.mkdtemp(prefix="budgetlm_demo_"))
corpus_dir, vocab_path = generate_corpus(root, n_docs=300, seed=1, n_words=1500, doc_words=200)
vocab = load_vocab(vocab_path)
prepare_corpus(corpus_dir, vocab, root / "shards", seq_len=64, copies=5,
               mask_prob=0.15, val_fraction=0.02, seed=1)

trainer = Trainer.from_shards(
    root / "shards",
    preset="tiny",
    out_dir=root / "run",
    bsz=32,
    micro_bsz=16,            # 32 = 2 x 16 via gradient accumulation
    peak_lr=2e-3,
    warmup_proportion=0.06,
    days_factor=1.0,         # anneal to zero exactly at the budget
    budget_seconds=30.0,
    seed=0,
)
status = trainer.run()
print(f"status={status} after {trainer.state.step} steps "
      f"({trainer.elapsed:.1f}s of training time)")
print(f"schedule planned {trainer.plan.total_steps} steps "
      f"at {trainer.plan.steps_per_second:.2f} steps/s")

steps, evals = parse_metrics(trainer.metrics_path)
print(f"\nchance-level loss would be ln({vocab.size}) = {np.log(vocab.size):.3f}")
print("validation loss trajectory:")
for elapsed, loss in evals:
    print(f"  {elapsed:7.1f}s  {loss:.4f}")
first_losses = [s[3] for s in steps[:5]]
last_losses = [s[3] for s in steps[-5:]]
print(f"train loss, first 5 steps: {np.round(first_losses, 3)}")
print(f"train loss, last 5 steps:  {np.round(last_losses, 3)}")
print(f"\ncheckpoint for resume: {trainer.checkpoint_path}")
