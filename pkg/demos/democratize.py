"""Compress a wide SVD embedding with an autoencoder ladder and probe what survives.

The label here is planted in trailing singular directions, which is exactly
what keeping only the leading 16 components throws away.

Run: python3 demos/democratize.py   (about 20 seconds)
"""
from embedforge.bench import probe_auc
from embedforge.democratize import AutoencoderSpec, encode_at_layer, train_autoencoder
from embedforge.factorize import absorb, truncated_svd
from embedforge.synthetic import make_planted_label_matrix

M, y = make_planted_label_matrix(seed=0)
E = absorb(truncated_svd(M, 200, seed=0)).left_star.values
ae = train_autoencoder(E, AutoencoderSpec((200, 64, 32, 16), lr=0.5, epochs=200, batch_size=16))
print(f"autoencoder loss {ae.loss_trace[0]:.3f} -> {ae.loss_trace[-1]:.3f}")
print("ladder widths:", [encode_at_layer(ae, E[0], j).shape[0] for j in range(4)])
print(f"probe AUC, 200-dim embedding:   {probe_auc(E, y):.3f}")
print(f"probe AUC, top-16 components:   {probe_auc(E[:, :16], y):.3f}")
print(f"probe AUC, 16-dim autoencoded:  {probe_auc(ae.encode(E), y):.3f}")
