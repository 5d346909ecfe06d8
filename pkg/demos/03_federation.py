"""
One federated round on the standard cohort
==========================================

Three clients with different class balance, label noise and attention
models distill their training slides, swap them once, and train locally.
Each client's pool holds only the other clients' synthetic slides.
"""
from pathlib import Path

from fedhd import federation as fed
from fedhd.cohort import generate_cohort
from fedhd.config import load_config

cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "standard.cfg")
seed = 0
clients = generate_cohort(cfg.cohort, seed)
for cl in clients:
    labels = [s.label for s in cl.train]
    print(f"{cl.client_id}: {len(cl.train)} train / {len(cl.test)} test, "
          f"{labels.count(1)} positive, {cl.variant} (hidden {cl.hidden_dim})")

result = fed.run_federation(clients, cfg.protocol(seed, ("local", "naive", "fedhd")))

for cid, pool in result.pools.items():
    print(f"pool of {cid}: {len(pool.slides)} slides from {sorted(pool.origins())}")
fed.check_exclusion(result.pools)

print()
for row in result.rows:
    print(f"{row['client_id']} {row['arm']:>6}: acc {row['accuracy']:.3f}  mcc {row['mcc']:+.3f}")
print()
for arm, vals in result.averages.items():
    print(f"weighted {arm:>6}: acc {vals['accuracy']:.3f}  mcc {vals['mcc']:+.3f}")

# A single seed is noisy with about a dozen test slides per client;
# tests/test_acceptance.py averages five.
