"""How fold-in quality changes with the share of users the model is trained on.

The most active N% of users train ALS; everyone else is folded in. Training
on light users adds noise to the item factors, so the curve tends to rise and
then fall again.

Run: python3 demos/foldin_curve.py
"""
from embedforge.foldin import foldin_experiment
from embedforge.synthetic import make_foldin_data

m, *_ = make_foldin_data(seed=0)
rows = foldin_experiment(m, [20, 40, 60, 80, 100], k=4, alpha=40.0, lam=1.0, seed=0)
print("percent  ndcg_trained  ndcg_folded  ndcg_all")
for r in rows:
    folded = "NA" if r.ndcg_folded is None else f"{r.ndcg_folded:.4f}"
    print(f"{r.percent:>7g}  {r.ndcg_trained:12.4f}  {folded:>11}  {r.ndcg_all:8.4f}")
