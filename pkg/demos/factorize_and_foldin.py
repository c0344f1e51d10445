"""Co-embed users and items with truncated SVD and ALS, then fold in new users.

Run: python3 demos/factorize_and_foldin.py
"""
import numpy as np

from embedforge.core import normalize
from embedforge.factorize import absorb, implicit_als, truncated_svd
from embedforge.foldin import FoldInMatrix, batch_fold_in, ls_fold_in, svd_fold_in
from embedforge.synthetic import make_foldin_data

m, *_ = make_foldin_data(seed=0)
x = normalize(m)
print(f"interactions: {m.n_rows} users x {m.n_cols} items, {m.nnz} stored cells")

svd = truncated_svd(x, k=8, seed=0)
model = absorb(svd)
print("top singular values:", np.round(svd.singular_values, 3))

# an existing user folded back in lands on its trained row
row = x.csr[5].toarray().ravel()
print("fold-in of user u5 matches its trained row:",
      np.allclose(svd_fold_in(row, model), model.left_star.values[5], atol=1e-6))

# brand-new users arrive as (user, item, weight) tuples
new = [("new1", "i3", 1.0), ("new1", "i17", 2.0), ("new2", "i40", 1.0), ("new2", "unknown", 1.0)]
res = batch_fold_in(new, FoldInMatrix.from_model(model))
print(f"folded {len(res.embeddings)} new users, skipped {res.n_unknown} unknown items")

als = implicit_als(x, k=8, alpha=40.0, lam=0.1, iters=10, seed=0)
print("ALS objective, init -> final:", f"{als.trace[0]:.2f} -> {als.trace[-1]:.4f}")
u = ls_fold_in(row, als)
print("ALS fold-in reproduces the trained user row:", np.allclose(u, als.left_star.values[5], atol=1e-8))
