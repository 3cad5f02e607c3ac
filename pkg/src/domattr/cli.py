"""Command-line interface: synth, train, eval, gradcheck, ablate.

Settings come from three layers with increasing precedence: built-in
defaults, a flat key=value config file (--config), and explicit flags.
Config keys are the flag names (dashes and underscores interchangeable);
unknown keys are rejected before any work starts.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
divergence, 5 gradient check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    DomainDataset,
    MultiDomainDataset,
    SplitSpec,
    SynthConfig,
    load_dataset,
    save_dataset,
    split_target,
    synth_generate,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    DomattrError,
    InputError,
    ShapeError,
    SingularityError,
)
from .gradcheck import GRADCHECK_TOL, run_gradcheck
from .objective import Hyper
from .serialize import dumps_canonical, load_params, save_params, save_report
from .solver import evaluate, fit

# ---------------------------------------------------------------------------
# Configuration plumbing
# ---------------------------------------------------------------------------


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_str_list(text) -> list[str]:
    return [part.strip() for part in str(text).split(",") if part.strip()]


# key -> (converter, default); config-file keys and flag names coincide.
SETTINGS: dict[str, tuple] = {
    "data": (str, None),
    "out": (str, "."),
    "seed": (int, 0),
    "c1": (float, 1.0),
    "c2": (float, 1.0),
    "c3": (float, 1.0),
    "alpha": (int, 2),
    "ma": (int, 8),
    "m0": (int, 8),
    "mt": (int, 8),
    "tau": (float, 1e-2),
    "eta": (int, 200),
    "eps": (float, 1e-6),
    "lambda": (float, 1e-6),
    "k": (int, 5),
    "inner_steps": (int, 1),
    "backtrack": (_parse_bool, True),
    "attr_scope": (str, "all"),
    "all_targets": (_parse_bool, False),
    # synth generator
    "domains": (int, 3),
    "classes": (int, 2),
    "per_domain": (int, 20),
    "dim": (int, 4),
    "attrs": (int, 6),
    "min_instances": (int, 3),
    "max_instances": (int, 6),
    "noise": (float, 1.0),
    "shift": (float, 2.0),
    # eval / gradcheck / ablate extras
    "params": (str, None),
    "trials": (int, 5),
    "c1_values": (_parse_str_list, None),
    "c2_values": (_parse_str_list, None),
    "c3_values": (_parse_str_list, None),
    "seeds": (_parse_str_list, None),
}


def _normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


def read_config_file(path) -> dict:
    """Flat key=value file; blank lines and #-comments are ignored."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = _normalize_key(key)
        if key not in SETTINGS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        conv, _ = SETTINGS[key]
        try:
            values[key] = conv(value.strip())
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit CLI flags."""
    cfg = {key: default for key, (_, default) in SETTINGS.items()}
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def hyper_from_config(cfg: dict) -> Hyper:
    return Hyper(
        c1=cfg["c1"],
        c2=cfg["c2"],
        c3=cfg["c3"],
        alpha=cfg["alpha"],
        m_attr=cfg["ma"],
        m_shared=cfg["m0"],
        m_domain=cfg["mt"],
        tau=cfg["tau"],
        eta=cfg["eta"],
        eps=cfg["eps"],
        ridge=cfg["lambda"],
        k=cfg["k"],
        inner_steps=cfg["inner_steps"],
        backtrack=cfg["backtrack"],
        attr_scope=cfg["attr_scope"],
    )


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(
        num_domains=cfg["domains"],
        num_classes=cfg["classes"],
        points_per_domain=cfg["per_domain"],
        dim=cfg["dim"],
        num_attributes=cfg["attrs"],
        min_instances=cfg["min_instances"],
        max_instances=cfg["max_instances"],
        alpha=cfg["alpha"],
        seed=cfg["seed"],
        noise=cfg["noise"],
        shift=cfg["shift"],
    )


def _require_data(cfg: dict) -> str:
    if not cfg["data"]:
        raise ConfigError("--data is required for this command")
    return cfg["data"]


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def rotate_target(ds: MultiDomainDataset, target: int) -> MultiDomainDataset:
    """Reorder domains so the chosen one is last (the target slot)."""
    if not 0 <= target < ds.num_domains:
        raise ConfigError(f"target index {target} out of range")
    order = [t for t in range(ds.num_domains) if t != target] + [target]
    return MultiDomainDataset(
        domains=tuple(ds.domains[t] for t in order), num_classes=ds.num_classes
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: dict) -> int:
    scfg = synth_config(cfg)
    ds = synth_generate(scfg)
    out = _out_dir(cfg) / "dataset.jsonl"
    save_dataset(ds, out)
    total = sum(len(dom) for dom in ds.domains)
    print(
        f"wrote {out}: {ds.num_domains} domains, {total} points, "
        f"d={ds.dim}, attributes={ds.num_attributes}, classes={ds.num_classes}"
    )
    return 0


def _labeled_prefix(ds: MultiDomainDataset) -> DomainDataset:
    target = ds.target
    return DomainDataset(
        points=target.points[: target.labeled_count],
        labeled_count=target.labeled_count,
    )


def cmd_train(cfg: dict) -> int:
    hyper = hyper_from_config(cfg)
    ds = load_dataset(_require_data(cfg))
    train_ds, _test = split_target(ds, SplitSpec(seed=cfg["seed"]))
    params, report = fit(train_ds, hyper, cfg["seed"])
    out = _out_dir(cfg)
    save_params(params, out / "params.json")
    save_report(report, out / "report.json")
    final = report.trace[-1].total if report.trace else float("nan")
    train_acc = evaluate(_labeled_prefix(train_ds), params, train_ds.target_index)
    print(f"final objective: {final}")
    print(f"labeled-target training accuracy: {train_acc}")
    print(f"iterations: {report.iterations} converged: {report.converged}")
    return 0


def cmd_eval(cfg: dict) -> int:
    ds = load_dataset(_require_data(cfg))
    hyper = hyper_from_config(cfg)
    out = _out_dir(cfg)
    rates = []
    if cfg["all_targets"]:
        for target in range(ds.num_domains):
            rotated = rotate_target(ds, target)
            train_ds, test = split_target(rotated, SplitSpec(seed=cfg["seed"]))
            params, _report = fit(train_ds, hyper, cfg["seed"])
            acc = evaluate(test, params, rotated.target_index)
            rates.append({"target": target, "accuracy": acc})
            print(f"target {target}: classification rate {acc}")
    else:
        if not cfg["params"]:
            raise ConfigError("--params is required unless --all-targets is set")
        params = load_params(cfg["params"])
        _train_ds, test = split_target(ds, SplitSpec(seed=cfg["seed"]))
        acc = evaluate(test, params, ds.target_index)
        rates.append({"target": ds.target_index, "accuracy": acc})
        print(f"target {ds.target_index}: classification rate {acc}")
    average = float(np.mean([r["accuracy"] for r in rates]))
    print(f"average classification rate: {average}")
    (out / "eval.json").write_text(
        dumps_canonical({"rates": rates, "average": average}), encoding="utf-8"
    )
    return 0


def cmd_gradcheck(cfg: dict) -> int:
    hyper = hyper_from_config(cfg)
    worst = run_gradcheck(cfg["seed"], cfg["trials"], hyper)
    status = 0
    for tag, err in worst.items():
        verdict = "ok" if err <= GRADCHECK_TOL else "FAIL"
        print(f"family {tag}: max relative error {err:.3e} [{verdict}]")
        if err > GRADCHECK_TOL:
            status = 5
    return status


def cmd_ablate(cfg: dict) -> int:
    ds = load_dataset(_require_data(cfg))
    out = _out_dir(cfg)
    c1s = [float(v) for v in (cfg["c1_values"] or [cfg["c1"]])]
    c2s = [float(v) for v in (cfg["c2_values"] or [cfg["c2"]])]
    c3s = [float(v) for v in (cfg["c3_values"] or [cfg["c3"]])]
    seeds = [int(v) for v in (cfg["seeds"] or [cfg["seed"]])]
    targets = list(range(ds.num_domains)) if cfg["all_targets"] else [ds.target_index]

    rows = []
    for c1 in c1s:
        for c2 in c2s:
            for c3 in c3s:
                for seed in seeds:
                    for target in targets:
                        hyper = hyper_from_config({**cfg, "c1": c1, "c2": c2, "c3": c3})
                        rotated = rotate_target(ds, target)
                        train_ds, test = split_target(rotated, SplitSpec(seed=seed))
                        params, _report = fit(train_ds, hyper, seed)
                        acc = evaluate(test, params, rotated.target_index)
                        rows.append((c1, c2, c3, seed, target, acc))
                        print(
                            f"c1={c1} c2={c2} c3={c3} seed={seed} "
                            f"target={target} accuracy={acc}"
                        )
    path = out / "ablation.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["c1", "c2", "c3", "seed", "target", "accuracy"])
        writer.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--data", help="dataset file (JSON Lines)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--c1", type=float)
    parser.add_argument("--c2", type=float)
    parser.add_argument("--c3", type=float)
    parser.add_argument("--alpha", type=int)
    parser.add_argument("--ma", type=int)
    parser.add_argument("--m0", type=int)
    parser.add_argument("--mt", type=int)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--eta", type=int)
    parser.add_argument("--eps", type=float)
    parser.add_argument("--lambda", dest="lambda", type=float)
    parser.add_argument("--k", type=int)
    parser.add_argument("--inner-steps", dest="inner_steps", type=int)
    parser.add_argument("--backtrack", type=_parse_bool)
    parser.add_argument("--attr-scope", dest="attr_scope", choices=["all", "labeled-target"])
    parser.add_argument("--all-targets", dest="all_targets", type=_parse_bool)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domattr",
        description="Train and evaluate multi-domain attribute-embedding classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--domains", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-domain", dest="per_domain", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--attrs", type=int)
    p.add_argument("--min-instances", dest="min_instances", type=int)
    p.add_argument("--max-instances", dest="max_instances", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--shift", type=float)

    p = sub.add_parser("train", help="split the target domain and fit the model")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate on the held-out target test split")
    _add_common(p)
    p.add_argument("--params", help="params file written by train")

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    _add_common(p)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("ablate", help="grid sweep over tradeoff weights and seeds")
    _add_common(p)
    p.add_argument("--c1-values", dest="c1_values", type=_parse_str_list)
    p.add_argument("--c2-values", dest="c2_values", type=_parse_str_list)
    p.add_argument("--c3-values", dest="c3_values", type=_parse_str_list)
    p.add_argument("--seeds", type=_parse_str_list)

    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ShapeError, InputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (DivergenceError, SingularityError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except DomattrError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
