"""Walk through the four loss terms on a hand-sized batch.

Prints each term (supervised, pseudo-label, self-supervised, weight decay)
for a tiny model and batch, then shows how the confidence threshold tau and
the self-supervised weight w_s move the total.

Usage: python demos/02_losses_walkthrough.py
"""

import torch

from doublematch.losses import (cosine_ssl_loss, mse_ssl_loss, pseudo_label_loss,
                                softmax_ssl_loss, supervised_loss, weight_decay_term)
from doublematch.model import build_model

torch.manual_seed(0)

bundle = build_model("desk-cnn", num_classes=3, feature_dim=16)
bundle.train_mode(True)

labeled = torch.rand(4, 3, 32, 32)
weak = torch.rand(8, 3, 32, 32)
strong = torch.rand(8, 3, 32, 32)
labels = torch.eye(3)[torch.tensor([0, 1, 2, 0])]

feats_l = bundle.backbone(labeled)
l_l = supervised_loss(labels, bundle.head_g(feats_l))
print("supervised loss on random init: %.4f (ln 3 = 1.0986)" % l_l)

with torch.no_grad():  # the teacher branch never receives gradient
    z = bundle.backbone(weak)
    w_logits = bundle.head_g(z)
v = bundle.backbone(strong)
q_logits = bundle.head_g(v)

for tau in (0.0, 0.5, 0.95):
    l_p, mask = pseudo_label_loss(w_logits, q_logits, tau)
    print("tau=%.2f  pseudo-label loss %.4f  mask rate %.2f" % (tau, l_p, mask))

l_cos, _ = cosine_ssl_loss(v, bundle.head_h, z)
l_mse = mse_ssl_loss(v, bundle.head_h, z)
l_sm = softmax_ssl_loss(v, bundle.head_h, z, temperature=1.0)
print("self-supervised: cosine %.4f  mse %.4f  softmax-ce %.4f" % (l_cos, l_mse, l_sm))

l_wd = weight_decay_term(bundle.param_groups(), w_d=5e-4)
print("weight decay term: %.6f" % l_wd)

for w_s in (0.0, 1.0, 5.0):
    l_p, _ = pseudo_label_loss(w_logits, q_logits, 0.95)
    total = l_l + l_p + w_s * l_cos + l_wd
    print("w_s=%.1f  total %.4f  (w_s=0 recovers the pseudo-label-only objective)"
          % (w_s, total))
