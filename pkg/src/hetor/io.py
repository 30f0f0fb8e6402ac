"""CSV ingestion and tree serialization (JSON, DOT)."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .data import Dataset
from .effects import EffectEstimate
from .tree import FitConfig, Split, Tree, TreeNode

__all__ = [
    "CsvFormatError",
    "SCHEMA_VERSION",
    "read_csv",
    "tree_to_dict",
    "tree_from_dict",
    "tree_to_json",
    "tree_to_dot",
    "load_tree",
]

SCHEMA_VERSION = 1
RESERVED = ("treatment", "outcome", "weight")


class CsvFormatError(ValueError):
    pass


def _number(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise CsvFormatError(f"line {line}: column {column!r}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise CsvFormatError(f"line {line}: column {column!r}: non-finite value {text!r}")
    return value


def read_csv(path, score_column: str | None = None, allow_missing: bool = False):
    """Load a dataset; returns ``(dataset, scores)``.

    Reserved columns are ``treatment`` (integer label, empty = missing),
    ``outcome`` and the optional ``weight`` (frequency weights); every other
    column except ``score_column`` is a numeric feature. With
    ``allow_missing``, ``scores`` holds one value per missing-treatment row
    (otherwise ``None``).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        for col in ("treatment", "outcome"):
            if col not in header:
                raise CsvFormatError(f"line 1: missing required column {col!r}")
        if len(set(header)) != len(header):
            raise CsvFormatError("line 1: duplicate column names")
        if score_column is not None and score_column not in header:
            # only needed when some treatment is missing; checked per row below
            score_column = None
        skip = set(RESERVED) | ({score_column} if score_column else set())
        feats = [i for i, h in enumerate(header) if h not in skip]
        i_t, i_y = header.index("treatment"), header.index("outcome")
        i_w = header.index("weight") if "weight" in header else None
        i_s = header.index(score_column) if score_column else None

        X, t, y, w, s = [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            row = [c.strip() for c in row]
            X.append([_number(row[i], line, header[i]) for i in feats])
            y.append(_number(row[i_y], line, "outcome"))
            if row[i_t] == "":
                if not allow_missing:
                    raise CsvFormatError(f"line {line}: missing treatment (use fit-robust)")
                t.append(math.nan)
                if i_s is None or row[i_s] == "":
                    raise CsvFormatError(f"line {line}: missing treatment needs a score")
                s.append(_number(row[i_s], line, score_column))
            else:
                label = _number(row[i_t], line, "treatment")
                if label != int(label) or label < 0:
                    raise CsvFormatError(f"line {line}: treatment must be a label 0, 1, ..., m")
                t.append(label)
            if i_w is not None:
                w.append(_number(row[i_w], line, "weight"))
    if not y:
        raise CsvFormatError(f"{path}: no data rows")
    names = tuple(header[i] for i in feats)
    X = np.array(X, dtype=float).reshape(len(y), len(feats))
    try:
        data = Dataset(X, np.array(t), np.array(y), np.array(w) if i_w is not None else None, names)
    except ValueError as exc:
        raise CsvFormatError(str(exc)) from None
    scores = np.array(s) if allow_missing else None
    return data, scores


# ---------------------------------------------------------------------------
# JSON


def _estimate_dict(est: EffectEstimate | None):
    if est is None:
        return None
    return {"theta": est.theta, "variance": est.variance, "n_eff": est.n_eff}


def _node_dict(node: TreeNode, tree: Tree) -> dict:
    ratio = tree.config.effect_mode != "cate"
    out = {
        "id": node.node_id,
        "depth": node.depth,
        "n_samples": node.n_samples,
        "estimate": _estimate_dict(node.estimate),
        "effect": None if node.estimate is None else
        (math.exp(node.estimate.theta) if ratio else node.estimate.theta),
        "ci": None if node.ci is None else list(node.ci),
        "split": None,
    }
    if tree.multi:
        out["treatments"] = [
            {"label": lab, "estimate": _estimate_dict(est), "ratio": math.exp(est.theta),
             "ci": list(ci)}
            for lab, (est, ci) in sorted((node.treatments or {}).items())
        ]
        out["recommended_treatment"] = node.recommended_treatment
        out["best_ratio"] = node.best_ratio
    if not node.is_leaf:
        out["split"] = {
            "feature": node.split.feature,
            "feature_name": tree.feature_names[node.split.feature],
            "threshold": node.split.threshold,
            "q": node.q,
            "p_value": node.p_value,
            "worst_case_p_value": node.worst_case_p_value,
        }
        out["left"] = _node_dict(node.left, tree)
        out["right"] = _node_dict(node.right, tree)
    return out


def tree_to_dict(tree: Tree) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "multi_treatment" if tree.multi else "binary",
        "effect_mode": tree.config.effect_mode,
        "feature_names": list(tree.feature_names),
        "treatment_labels": list(tree.treatment_labels),
        # n_jobs never changes the fitted tree, so it stays out of the artifact
        "config": {k: v for k, v in tree.config.to_dict().items() if k != "n_jobs"},
        "root": _node_dict(tree.root, tree),
    }


def tree_to_json(tree: Tree) -> str:
    return json.dumps(tree_to_dict(tree), indent=2) + "\n"


def _node_from_dict(d: dict) -> TreeNode:
    est = d.get("estimate")
    node = TreeNode(
        depth=d["depth"],
        n_samples=d["n_samples"],
        estimate=None if est is None else EffectEstimate(est["theta"], est["variance"], est["n_eff"]),
        ci=None if d.get("ci") is None else tuple(d["ci"]),
        node_id=d["id"],
        recommended_treatment=d.get("recommended_treatment"),
        best_ratio=d.get("best_ratio"),
    )
    if "treatments" in d:
        node.treatments = {
            tr["label"]: (EffectEstimate(**tr["estimate"]), tuple(tr["ci"])) for tr in d["treatments"]
        }
    split = d.get("split")
    if split is not None:
        node.split = Split(split["feature"], split["threshold"])
        node.q, node.p_value = split["q"], split["p_value"]
        node.worst_case_p_value = split.get("worst_case_p_value")
        node.left = _node_from_dict(d["left"])
        node.right = _node_from_dict(d["right"])
    return node


def tree_from_dict(d: dict) -> Tree:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
    config = FitConfig(**d["config"])
    return Tree(_node_from_dict(d["root"]), config, tuple(d["feature_names"]),
                multi=d["kind"] == "multi_treatment",
                treatment_labels=tuple(d["treatment_labels"]))


def load_tree(path) -> Tree:
    return tree_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# DOT


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def tree_to_dot(tree: Tree) -> str:
    ratio = tree.config.effect_mode != "cate"
    label = {"or": "OR", "rr": "RR", "cate": "CATE"}[tree.config.effect_mode]
    lines = ["digraph hor {", "  node [shape=box, fontname=\"Helvetica\"];"]
    for node in tree.root.walk():
        parts = [f"n = {node.n_samples:g}"]
        if node.estimate is not None:
            value = math.exp(node.estimate.theta) if ratio else node.estimate.theta
            ci = "" if node.ci is None else f" ({_fmt(node.ci[0])} - {_fmt(node.ci[1])})"
            parts.append(f"{label} {_fmt(value)}{ci}")
        if tree.multi and node.recommended_treatment is not None:
            parts.append(f"best: T={node.recommended_treatment} ({_fmt(node.best_ratio)})")
        if not node.is_leaf:
            name = tree.feature_names[node.split.feature]
            parts.insert(0, f"{name} < {node.split.threshold:g}?")
            parts.append(f"p = {node.p_value:.2g}")
        text = "\\n".join(parts).replace('"', '\\"')
        lines.append(f'  n{node.node_id} [label="{text}"];')
        if not node.is_leaf:
            lines.append(f'  n{node.node_id} -> n{node.left.node_id} [label="yes"];')
            lines.append(f'  n{node.node_id} -> n{node.right.node_id} [label="no"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
