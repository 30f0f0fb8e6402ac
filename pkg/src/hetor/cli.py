"""Command-line front end.

Every subcommand writes its artifacts into ``--out`` together with a
``manifest.json`` recording the command line, configuration, input digest
and artifact digests; ``hetor replay`` re-runs a manifest and checks that the
artifacts come out byte-identical.

Errors are reported as one line on stderr, ``hetor: error: <kind>: <message>``,
with a nonzero exit code.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .io import CsvFormatError, read_csv, tree_to_dot, tree_to_json
from .robust import fit_rhor, gamma_sweep, read_scenarios, scenario_count, write_scenarios
from .synthetic import RULE_KINDS, benchmark_config, run_benchmark, write_benchmark_csv
from .tree import FitConfig, Tree, best_split, fit_hor, fit_multi_treatment

__all__ = ["main", "RunManifest", "build_parser"]

MANIFEST_NAME = "manifest.json"
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISMATCH = 3


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, EXIT_USAGE)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int
    input_path: str | None = None
    input_sha256: str | None = None
    artifacts: dict = field(default_factory=dict)
    duration_seconds: float = 0.0
    version: str = __version__

    def write(self, out_dir: Path) -> Path:
        path = out_dir / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**raw)


# ---------------------------------------------------------------------------
# argument parsing


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _tree_flags(p: argparse.ArgumentParser, effects=("or", "rr", "cate")) -> None:
    p.add_argument("input", help="input CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--effect", choices=effects, default="or")
    p.add_argument("--p-max", type=float, default=0.05)
    p.add_argument("--p-max-decay", type=float, default=1.0)
    p.add_argument("--max-depth", type=int, default=5)
    p.add_argument("--min-leaf", type=int, default=10)
    p.add_argument("--alpha-frac", type=float, default=0.05,
                   help="minimum child share of its parent")
    p.add_argument("--no-correction", action="store_true",
                   help="disable the +0.5 cell correction")
    p.add_argument("--quantile-grid", type=int, default=None, metavar="Q")
    p.add_argument("--ci-alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="threads for the split search")
    p.add_argument("--format", choices=("json", "dot"), default="json",
                   help="dot also writes tree.dot next to tree.json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetor", description="Heterogeneous treatment-effect trees.")
    parser.add_argument("--version", action="version", version=f"hetor {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a tree on fully observed data")
    _tree_flags(p)

    p = sub.add_parser("fit-robust", help="fit a tree with partially observed treatments")
    _tree_flags(p, effects=("or", "rr"))
    p.add_argument("--score-column", default="score")
    p.add_argument("--gamma", type=float, default=0.15)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--scenarios", type=int, default=None, metavar="N",
                   help="number of scenarios (overrides the epsilon/beta count)")
    p.add_argument("--scenario-file", default=None, help="reuse scenarios from a previous run")
    p.add_argument("--gamma-sweep", type=_float_list, default=None, metavar="G1,G2,...",
                   help="worst-case p-value of the reference root split per budget")

    p = sub.add_parser("bench", help="run the synthetic rule-recovery benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=_float_list, default=[0.5, 1.0, 2.0, 4.0])
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--rule", choices=RULE_KINDS, default="two_rule")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--confounded", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-max", type=float, default=0.1)
    p.add_argument("--max-depth", type=int, default=10)
    p.add_argument("--min-leaf", type=int, default=20)
    p.add_argument("--alpha-frac", type=float, default=0.05)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("replay", help="re-run a manifest and compare artifact digests")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="where to write the replayed artifacts")
    p.add_argument("--jobs", type=int, default=None, help="override the thread count")
    return parser


def _config(args) -> FitConfig:
    try:
        return FitConfig(p_max=args.p_max, max_depth=args.max_depth, min_leaf=args.min_leaf,
                         min_child_fraction=args.alpha_frac, effect_mode=args.effect,
                         correction=not args.no_correction, quantiles=args.quantile_grid,
                         seed=args.seed, p_max_decay=args.p_max_decay, ci_alpha=args.ci_alpha,
                         n_jobs=args.jobs)
    except ValueError as exc:
        raise CliError("usage", str(exc), EXIT_USAGE) from None


# ---------------------------------------------------------------------------
# output helpers


def _rule_text(path: list[str]) -> str:
    return " & ".join(path) if path else "(all)"


def leaf_table(tree: Tree) -> str:
    """Plain-text table with one row per leaf."""
    mode = tree.config.effect_mode
    head = {"or": "OR", "rr": "RR", "cate": "CATE"}[mode]
    rows = []

    def visit(node, path):
        if node.is_leaf:
            est = node.estimate
            if est is None:
                eff, ci = "nan", "-"
            else:
                value = math.exp(est.theta) if mode != "cate" else est.theta
                eff = f"{value:.4g}"
                ci = "-" if node.ci is None else f"{node.ci[0]:.4g} - {node.ci[1]:.4g}"
            extra = ""
            if tree.multi and node.recommended_treatment is not None:
                extra = f"  best T={node.recommended_treatment} ({node.best_ratio:.4g})"
            rows.append(f"{node.node_id:>4}  {node.n_samples:>10g}  {eff:>10}  {ci:>21}  "
                        f"{_rule_text(path)}{extra}")
            return
        name = tree.feature_names[node.split.feature]
        thr = f"{node.split.threshold:g}"
        visit(node.left, path + [f"{name} < {thr}"])
        visit(node.right, path + [f"{name} >= {thr}"])

    visit(tree.root, [])
    header = f"{'leaf':>4}  {'n':>10}  {head:>10}  {'95% CI':>21}  rule"
    return "\n".join([header] + rows)


def _write_tree(tree: Tree, out: Path, fmt: str) -> dict:
    arts = {"tree.json": tree_to_json(tree)}
    if fmt == "dot":
        arts["tree.dot"] = tree_to_dot(tree)
    for name, text in arts.items():
        (out / name).write_text(text, encoding="utf-8")
    return {name: None for name in arts}


def _read(args, allow_missing: bool, score_column=None):
    try:
        return read_csv(args.input, score_column=score_column, allow_missing=allow_missing)
    except FileNotFoundError:
        raise CliError("io", f"no such file: {args.input}") from None
    except CsvFormatError as exc:
        raise CliError("csv", f"{args.input}: {exc}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args, out: Path) -> tuple[dict, dict]:
    config = _config(args)
    data, _ = _read(args, allow_missing=False)
    if data.treatment.max() > 1:
        if config.effect_mode == "cate":
            raise CliError("usage", "CATE trees need 0/1 treatments")
        tree = fit_multi_treatment(data, config)
    else:
        tree = fit_hor(data, config)
    arts = _write_tree(tree, out, args.format)
    print(leaf_table(tree))
    return config.to_dict(), arts


def cmd_fit_robust(args, out: Path) -> tuple[dict, dict]:
    config = _config(args)
    data, scores = _read(args, allow_missing=True, score_column=args.score_column)
    scenarios = None
    if args.scenario_file is not None:
        try:
            scenarios = read_scenarios(args.scenario_file)
        except (OSError, ValueError) as exc:
            raise CliError("scenario_file", str(exc)) from None
    n_scen = args.scenarios
    if n_scen is None and scenarios is None:
        n_scen = scenario_count(args.epsilon, args.beta)
    tree = fit_rhor(data, scores, config, gamma=args.gamma, epsilon=args.epsilon,
                    beta=args.beta, n_scenarios=n_scen, scenarios=scenarios)
    arts = _write_tree(tree, out, args.format)
    print(leaf_table(tree))

    sset = tree.scenario_set
    if sset is not None:
        write_scenarios(out / "scenarios.csv", sset)
        arts["scenarios.csv"] = None
        print(f"\nscenarios: {len(sset)}  (t0 = s{sset.t0_index})")
    splits = [n for n in tree.nodes() if not n.is_leaf]
    if splits:
        print("\nsplit  feature  p-value  worst-case p-value")
        for node in splits:
            wc = node.worst_case_p_value
            wc_text = "-" if wc is None else f"{wc:.4g}"
            print(f"{node.node_id:>5}  {tree.feature_names[node.split.feature]:>7}  "
                  f"{node.p_value:.4g}  {wc_text}")

    if args.gamma_sweep is not None:
        if sset is None:
            raise CliError("gamma_sweep", "no missing treatments; nothing to sweep")
        # the swept partition is the root split chosen under the reference assignment
        ref = best_split(data.fill_missing(sset.t0), config)
        if ref is None:
            raise CliError("gamma_sweep", "no admissible root split to evaluate")
        leaf_index = (data.X[:, ref.split.feature] < ref.split.threshold).astype(int)
        rows = gamma_sweep(data, leaf_index, sset, args.gamma_sweep,
                           config.effect_mode, config.correction)
        lines = ["gamma,q,p_value"] + [f"{g!r},{q!r},{p!r}" for g, q, p in rows]
        (out / "gamma_sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        arts["gamma_sweep.csv"] = None
        name = tree.feature_names[ref.split.feature]
        print(f"\nroot split {name} < {ref.split.threshold:g}")
        print("gamma   worst-case p-value")
        for g, _, p in rows:
            print(f"{g:<7g} {p:.4g}")
    conf = config.to_dict()
    conf.update(gamma=args.gamma, epsilon=args.epsilon, beta=args.beta,
                n_scenarios=None if sset is None else len(sset),
                scenario_file=args.scenario_file, score_column=args.score_column)
    return conf, arts


def cmd_bench(args, out: Path) -> tuple[dict, dict]:
    try:
        config = benchmark_config(p_max=args.p_max, max_depth=args.max_depth,
                                  min_leaf=args.min_leaf, min_child_fraction=args.alpha_frac,
                                  n_jobs=args.jobs)
        if args.reps < 1:
            raise ValueError("--reps must be >= 1")
        rows = run_benchmark(args.k, reps=args.reps, rule_kind=args.rule, n=args.n, p=args.p,
                             confounded=args.confounded, seed=args.seed, config=config)
    except ValueError as exc:
        raise CliError("usage", str(exc), EXIT_USAGE) from None
    write_benchmark_csv(rows, out / "bench.csv")
    by_k: dict[float, list] = {}
    for r in rows:
        by_k.setdefault(r["k"], []).append(r)
    print("k        complexity  purity   A      F")
    for k, rs in by_k.items():
        mean = {c: float(np.nanmean([r[c] for r in rs])) for c in ("complexity", "purity", "A", "F")}
        print(f"{k:<8g} {mean['complexity']:<11.3f} {mean['purity']:<8.3f} "
              f"{mean['A']:<6.3f} {mean['F']:.3f}")
    conf = config.to_dict()
    conf.update(k=args.k, reps=args.reps, rule=args.rule, n=args.n, p=args.p,
                confounded=args.confounded)
    return conf, {"bench.csv": None}


COMMANDS = {"fit": cmd_fit, "fit-robust": cmd_fit_robust, "bench": cmd_bench}


def _run(argv: list[str]) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        return cmd_replay(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    # artifacts are staged and only moved into --out once the command succeeded
    with tempfile.TemporaryDirectory(dir=out, prefix=".staging-") as staging:
        config, arts = COMMANDS[args.command](args, Path(staging))
        digests = {name: sha256_file(Path(staging) / name) for name in sorted(arts)}
        for name in arts:
            os.replace(Path(staging) / name, out / name)
    input_path = getattr(args, "input", None)
    manifest = RunManifest(
        command=args.command,
        argv=_absolute_argv(argv, args),
        config=config,
        seed=args.seed,
        input_path=None if input_path is None else str(Path(input_path).resolve()),
        input_sha256=None if input_path is None else sha256_file(input_path),
        artifacts=digests,
        duration_seconds=round(time.perf_counter() - start, 6),
    )
    manifest.write(out)
    return 0


_SWITCHES = ("--no-correction", "--confounded")


def _absolute_argv(argv: list[str], args) -> list[str]:
    """``argv`` with input and scenario paths made absolute, for replay from any cwd."""
    argv = list(argv)
    start = argv.index(args.command) + 1
    for i in range(start, len(argv) if hasattr(args, "input") else 0):
        prev = argv[i - 1]
        takes_value = prev.startswith("--") and "=" not in prev and prev not in _SWITCHES
        if argv[i] == args.input and (i == start or not takes_value):
            argv[i] = str(Path(args.input).resolve())
            break
    if getattr(args, "scenario_file", None) is not None:
        argv = _replace_flag(argv, "--scenario-file", str(Path(args.scenario_file).resolve()))
    return argv


def _replace_flag(argv: list[str], flag: str, value: str) -> list[str]:
    out, skip = [], False
    for i, tok in enumerate(argv):
        if skip:
            skip = False
            continue
        if tok == flag:
            skip = True
            continue
        if tok.startswith(flag + "="):
            continue
        out.append(tok)
    return out + [flag, value]


def cmd_replay(args) -> int:
    try:
        manifest = RunManifest.read(args.manifest)
    except (OSError, ValueError, TypeError) as exc:
        raise CliError("manifest", f"cannot read {args.manifest}: {exc}") from None
    argv = list(manifest.argv)
    if manifest.input_path is not None:
        if not os.path.exists(manifest.input_path):
            raise CliError("replay", f"input no longer exists: {manifest.input_path}")
        if sha256_file(manifest.input_path) != manifest.input_sha256:
            raise CliError("replay", f"input digest changed: {manifest.input_path}", EXIT_MISMATCH)
    if args.jobs is not None:
        argv = _replace_flag(argv, "--jobs", str(args.jobs))

    tmp = None
    if args.out is None:
        tmp = tempfile.TemporaryDirectory(prefix="hetor-replay-")
        target = Path(tmp.name)
    else:
        target = Path(args.out)
    try:
        argv = _replace_flag(argv, "--out", str(target))
        _run(argv)
        fresh = RunManifest.read(target / MANIFEST_NAME)
    finally:
        if tmp is not None:
            tmp.cleanup()
    bad = sorted(name for name in set(manifest.artifacts) | set(fresh.artifacts)
                 if manifest.artifacts.get(name) != fresh.artifacts.get(name))
    if bad:
        raise CliError("replay_mismatch", "artifacts differ: " + ", ".join(bad), EXIT_MISMATCH)
    print(f"replay ok: {len(manifest.artifacts)} artifact(s) identical", file=sys.stderr)
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _run(argv)
    except CliError as exc:
        code = exc.code
        kind, message = exc.kind, str(exc)
    except (ValueError, OSError) as exc:
        code, kind, message = EXIT_ERROR, type(exc).__name__, str(exc)
    message = " ".join(message.split())
    print(f"hetor: error: {kind}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
