"""
Training the bot detector and serving it
========================================

The synthetic corpus gives 250 labeled nodes. A random forest is trained on
70% of them, checked on the rest, registered, and queried by version.
"""

import tempfile

import numpy as np

from nwdaf_loop.ees.model import AnalyticsEventId
from nwdaf_loop.engine import FEATURE_SCHEMA
from nwdaf_loop.harness.corpus import features_from_flows, synthetic_flows
from nwdaf_loop.mlprov import Registry, split_holdout, train_forest

rows = features_from_flows(synthetic_flows(seed=1, benign=200, bots=50))
print(f"{len(rows)} nodes, {int(rows.y.sum())} bots")

Xtr, ytr, Xte, yte = split_holdout(rows.X, rows.y, 0.3, seed=1)
model = train_forest(Xtr, ytr, num_trees=100, max_depth=10, seed=1, feature_schema=FEATURE_SCHEMA)
pred = np.array([label for label, _ in model.infer(Xte)])
print(f"holdout accuracy {np.mean(pred == yte):.3f} on {len(yte)} nodes")

# confusion matrix, rows = truth, columns = prediction
cm = np.zeros((2, 2), dtype=int)
np.add.at(cm, (yte, pred), 1)
print(cm)

# per-feature view of what separates the classes
for j, name in enumerate(FEATURE_SCHEMA):
    print(f"{name:>13}: benign median {np.median(rows.X[rows.y == 0, j]):8.3g}   "
          f"bot median {np.median(rows.X[rows.y == 1, j]):8.3g}")

with tempfile.TemporaryDirectory() as d:
    reg = Registry(d)
    reg.register_model(model)
    reg.register_model(train_forest(rows.X, rows.y, num_trees=100, max_depth=10, seed=2,
                                         feature_schema=FEATURE_SCHEMA))
    print("\nregistered", [(m.name, m.version) for m in reg.query_models(AnalyticsEventId.ABNORMAL_BEHAVIOUR)])
    scan_like = np.array([[1, 20, 20, 20, 0.0]])
    for version in (1, 2):
        ((label, vote),) = reg.get("bot-rf", version).infer(scan_like)
        print(f"v{version}: scan-like node -> label {label}, vote share {vote:.2f}")
