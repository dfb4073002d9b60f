"""Iterative random-forest imputation of a TagTable.

Missing cells start at the column mean (continuous) or mode (categorical);
columns are then revisited in ascending-missingness order, each fitted as a
forest target over the remaining columns, until the imputed values stop
improving. The final-iteration forests are frozen so held-out corpora can
be completed without refitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor

from .errors import AllMissingColumnError
from .tags import CATEGORICAL, CONTINUOUS, TagTable


def _forest_seed(seed: int, iteration: int, col: int) -> int:
    return int(np.random.SeedSequence(entropy=(seed, iteration, col)).generate_state(1)[0])


def _make_forest(kind: str, seed: int, n_estimators: int):
    if kind == CONTINUOUS:
        return RandomForestRegressor(
            n_estimators=n_estimators, criterion="squared_error",
            max_features=1.0 / 3.0, bootstrap=True, random_state=seed)
    return RandomForestClassifier(
        n_estimators=n_estimators, criterion="gini",
        max_features="sqrt", bootstrap=True, random_state=seed)


@dataclass
class MissForestModel:
    names: list[str]
    kinds: list[str]
    vocabs: dict[int, list[str]]
    init_fill: list
    column_order: list[int]
    forests: dict[int, object] = field(default_factory=dict)
    n_iterations: int = 0


def _to_numeric(table: TagTable, vocabs: dict[int, list[str]],
                mode_fallback: list | None = None) -> np.ndarray:
    """Code the table as floats; nan marks missing. Unseen categories take
    the fit-time mode so frozen forests see in-vocabulary inputs."""
    n, p = table.n_rows, len(table.names)
    X = np.full((n, p), np.nan)
    for j in range(p):
        if table.kinds[j] == CONTINUOUS:
            for i in range(n):
                if not table.mask[i, j]:
                    X[i, j] = float(table.values[i, j])
        else:
            index = {c: k for k, c in enumerate(vocabs[j])}
            for i in range(n):
                if not table.mask[i, j]:
                    code = index.get(str(table.values[i, j]))
                    if code is None and mode_fallback is not None:
                        code = vocabs[j].index(str(mode_fallback[j]))
                    X[i, j] = code if code is not None else np.nan
    return X


def missforest_impute(table: TagTable, seed: int = 0, max_iter: int = 10,
                      n_estimators: int = 100) -> tuple[TagTable, MissForestModel]:
    """Impute every missing cell; observed cells are never altered."""
    n, p = table.n_rows, len(table.names)
    for j in range(p):
        if table.mask[:, j].all():
            raise AllMissingColumnError(table.names[j])

    vocabs = {j: table.distinct(j) for j in range(p) if table.kinds[j] == CATEGORICAL}
    X = _to_numeric(table, vocabs)
    miss = table.mask.copy()

    init_fill = []
    for j in range(p):
        obs = X[~miss[:, j], j]
        if table.kinds[j] == CONTINUOUS:
            fill = float(obs.mean())
            init_fill.append(fill)
        else:
            counts = np.bincount(obs.astype(int), minlength=len(vocabs[j]))
            code = int(counts.argmax())  # ties go to the lexicographically first category
            init_fill.append(vocabs[j][code])
            fill = code
        X[miss[:, j], j] = fill

    miss_counts = miss.sum(axis=0)
    order = [j for j in np.argsort(miss_counts, kind="stable") if miss_counts[j] > 0]
    model = MissForestModel(list(table.names), list(table.kinds), vocabs,
                            init_fill, [int(j) for j in order])

    if not order or p < 2 or not miss.any():
        return _decode(table, X, miss, vocabs), model

    cont_cells = miss & np.array([k == CONTINUOUS for k in table.kinds])[None, :]
    cat_cells = miss & ~np.array([k == CONTINUOUS for k in table.kinds])[None, :]
    prev_diff_cont = prev_diff_cat = np.inf
    accepted_X = X.copy()
    accepted_forests: dict[int, object] = {}
    forests: dict[int, object] = {}
    iterations = 0

    for it in range(max_iter):
        old = X.copy()
        forests: dict[int, object] = {}
        for j in order:
            rows_obs = ~miss[:, j]
            features = np.delete(X, j, axis=1)
            forest = _make_forest(table.kinds[j], _forest_seed(seed, it, j), n_estimators)
            if table.kinds[j] == CONTINUOUS:
                forest.fit(features[rows_obs], X[rows_obs, j])
            else:
                forest.fit(features[rows_obs], X[rows_obs, j].astype(int))
            X[miss[:, j], j] = forest.predict(features[miss[:, j]])
            forests[j] = forest

        diff_cont = float(((X - old)[cont_cells] ** 2).sum()) if cont_cells.any() else 0.0
        diff_cat = (float((X != old)[cat_cells].sum()) / cat_cells.sum()
                    if cat_cells.any() else 0.0)
        cont_worse = (not cont_cells.any()) or diff_cont >= prev_diff_cont
        cat_worse = (not cat_cells.any()) or diff_cat >= prev_diff_cat
        if it > 0 and cont_worse and cat_worse:
            X = accepted_X  # this round got worse; keep the previous one
            forests = accepted_forests
            break
        prev_diff_cont, prev_diff_cat = diff_cont, diff_cat
        accepted_X, accepted_forests = X.copy(), forests
        iterations = it + 1

    model.forests = accepted_forests if accepted_forests else forests
    model.n_iterations = iterations
    return _decode(table, X, miss, vocabs), model


def apply_missforest(table: TagTable, model: MissForestModel) -> TagTable:
    """Complete a new table with frozen forests: init fill, then one pass.

    Columns are taken in the model's order; the model's kinds and
    vocabularies override whatever the new table inferred.
    """
    name_to_j = {n: j for j, n in enumerate(table.names)}
    cols = [name_to_j[n] for n in model.names]  # SchemaDrift is checked upstream
    sub = TagTable(list(table.ids), list(model.names), list(model.kinds),
                   table.values[:, cols], table.mask[:, cols])
    X = _to_numeric(sub, model.vocabs, mode_fallback=model.init_fill)
    miss = sub.mask.copy()
    for j in range(len(model.names)):
        fill = model.init_fill[j]
        if model.kinds[j] == CATEGORICAL:
            fill = model.vocabs[j].index(str(fill))
        X[np.isnan(X[:, j]), j] = fill
    for j in model.column_order:
        rows = miss[:, j]
        if not rows.any() or j not in model.forests:
            continue
        features = np.delete(X, j, axis=1)
        X[rows, j] = model.forests[j].predict(features[rows])
    return _decode(sub, X, miss, model.vocabs)


def _decode(table: TagTable, X: np.ndarray, miss: np.ndarray,
            vocabs: dict[int, list[str]] | None = None) -> TagTable:
    if vocabs is None:
        vocabs = {j: table.distinct(j) for j in range(len(table.names))
                  if table.kinds[j] == CATEGORICAL}
    out = table.copy()
    for j in range(len(table.names)):
        for i in np.where(miss[:, j])[0]:
            if table.kinds[j] == CONTINUOUS:
                out.values[i, j] = float(X[i, j])
            else:
                out.values[i, j] = vocabs[j][int(X[i, j])]
            out.mask[i, j] = False
    return out
