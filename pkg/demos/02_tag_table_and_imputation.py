"""Tag metadata -> clean numeric features.

Shows the whole metadata path: multi-value splitting, regex body-part
imputation, fill-rate filtering, the MCAR screen and MissForest completion,
ending in a one-hot / min-max encoded matrix.
"""

import numpy as np

from medclust.missforest import missforest_impute
from medclust.tags import (
    TagTable,
    default_bpe_rules,
    encode_apply,
    encode_fit,
    filter_tags,
    impute_bpe,
    infer_kinds,
    missingness_report,
    split_multivalue,
)

rng = np.random.default_rng(7)
n = 240

# hand-build a raw table: ImageType is multi-valued, BodyPartExamined is
# mostly missing, KVP is missing more often for one modality (not MCAR)
names = ["Modality", "BodyPartExamined", "StudyDescription", "ImageType", "KVP"]
values = np.full((n, len(names)), None, dtype=object)
mask = np.ones((n, len(names)), dtype=bool)
for i in range(n):
    ct = i % 2 == 0
    values[i, 0] = "CT" if ct else "MR"
    if rng.random() < 0.3:
        values[i, 1] = "HEAD"
    values[i, 2] = "CT glave" if ct else "MR mozga"
    values[i, 3] = ("ORIGINAL", "PRIMARY")
    if rng.random() > (0.6 if not ct else 0.05):
        values[i, 4] = f"{rng.normal(120 if ct else 90, 5):.1f}"
    for j in range(len(names)):
        mask[i, j] = values[i, j] is None

table = TagTable([f"i{i}" for i in range(n)], names,
                 ["categorical"] * len(names), values, mask)

table = split_multivalue(table)
print("after multi-value split:", table.names)

rules = default_bpe_rules()
label = impute_bpe({"BodyPartExamined": "", "StudyDescription": "RTG torax"}, rules)
print(f"rule imputation example: 'RTG torax' -> {label}")

filled = sum(impute_bpe({"BodyPartExamined": str(table.values[i, 1] or ""),
                         "StudyDescription": str(table.values[i, 2])}, rules) is not None
             for i in range(n))
print(f"body part resolvable for {filled}/{n} rows (was {n - int(table.mask[:, 1].sum())})")

table = infer_kinds(table)
clean, decisions = filter_tags(table, blocklist=("StudyDescription",))
for column, decision in decisions:
    print(f"  filter: {column:22s} {decision}")

entries, flags = missingness_report(clean, seed=7)
for column, mcar in flags.items():
    verdict = "MCAR-consistent" if mcar else "NOT missing-completely-at-random"
    print(f"missingness screen: {column} -> {verdict}")
for e in entries[:3]:
    print(f"  {e.column} vs {e.other}: {e.test} p={e.p_value:.2e}")

completed, model = missforest_impute(clean, seed=7, n_estimators=40)
print(f"MissForest ran {model.n_iterations} iteration(s); mask empty: "
      f"{not completed.mask.any()}")

state = encode_fit(completed)
matrix, feature_names, warnings = encode_apply(completed, state)
print(f"encoded matrix: {matrix.shape}, features: {feature_names}")
