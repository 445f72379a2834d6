"""Chain Gaussian pipeline: synth -> train -> sample -> eval -> plot-dependency.

Every step goes through the ``ngm`` command line.  The collected numbers
(structure ratio, loss against a full-graph model, dependency-curve slopes and
edge recovery per sample count) are written to ``<out>/metrics.json``.

    python3 scripts/chain_pipeline.py --out runs/chain --seed 0
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from itertools import combinations
from pathlib import Path

import numpy as np

from ngm.cli import run

# fixture settings for the 10-node chain; see README
TRAIN_FLAGS = ["--hidden", "30", "--layers", "2", "--activation", "tanh", "--eps-log", "1.0",
               "--lambda", "fixed:1.0", "--variant-lambda", "fixed:3.0", "--norm", "l2"]


def _call(argv: list[str]) -> None:
    code = run(argv)
    if code != 0:
        raise SystemExit(f"step failed with exit {code}: ngm {' '.join(argv)}")


def _complete_graph(names, path: Path) -> None:
    path.write_text("".join(f"{a}\t{b}\tundirected\n" for a, b in combinations(names, 2)))


def pipeline(out: Path, seed: int = 0, nodes: int = 10, samples: int = 2000,
             counts=(1000, 4000), epochs_init: int = 100, epochs: int = 400,
             threads: int = 1) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    common = ["--threads", str(threads)]
    syn = out / "synth"
    _call(["synth", "--nodes", str(nodes), "--samples", str(samples), "--seed", str(seed),
           "--out", str(syn)] + common)
    names = (syn / "data.csv").read_text().splitlines()[0].split(",")
    theta = np.loadtxt(syn / "theta.csv", delimiter=",", skiprows=1)

    epochs_flags = ["--epochs-init", str(epochs_init), "--epochs", str(epochs), "--seed", str(seed)]
    model = out / "chain.ngm"
    _call(["train", "--data", str(syn / "data.csv"), "--graph", str(syn / "graph.edges"),
           "--out", str(model)] + TRAIN_FLAGS + epochs_flags + common)
    full_graph = out / "complete.edges"
    _complete_graph(names, full_graph)
    full = out / "full.ngm"
    _call(["train", "--data", str(syn / "data.csv"), "--graph", str(full_graph), "--no-binned",
           "--out", str(full)] + TRAIN_FLAGS + epochs_flags + common)

    chain = json.loads((out / "chain.ngm.manifest.json").read_text())
    unconstrained = json.loads((out / "full.ngm.manifest.json").read_text())
    reg = chain["final_losses"]["model"]["regression"]
    reg_full = unconstrained["final_losses"]["model"]["regression"]
    metrics: dict = {
        "seed": seed,
        "structure_ratio": chain["structure_ratio"],
        "regression_loss": reg,
        "full_graph_regression_loss": reg_full,
        "regression_ratio": reg / reg_full,
    }

    curves = {}
    for i in range(nodes - 1):
        a, b = names[i], names[i + 1]
        csv = out / "curves" / f"{a}_{b}.csv"
        csv.parent.mkdir(exist_ok=True)
        _call(["plot-dependency", "--model", str(model), "--pair", f"{a},{b}",
               "--out", f"{csv},{csv.with_suffix('.svg')}"] + common)
        c = json.loads(csv.with_name(csv.name + ".manifest.json").read_text())["curve"]
        expected = float(np.sign(-theta[i, i + 1]))
        curves[f"{a}-{b}"] = {"slope": c["slope"], "r2": c["r2"],
                              "expected_sign": expected,
                              "sign_ok": bool(np.sign(c["slope"]) == expected)}
    metrics["curves"] = curves
    metrics["signs_correct"] = sum(c["sign_ok"] for c in curves.values())
    metrics["min_r2"] = min(c["r2"] for c in curves.values())

    recovery = {}
    for n in counts:
        csv = out / f"samples_{n}.csv"
        _call(["sample", "--model", str(model), "--count", str(n), "--seed", str(seed),
               "--out", str(csv)] + common)
        ev = out / f"eval_{n}.json"
        _call(["eval", "--true", str(syn / "graph.edges"), "--samples", str(csv),
               "--out", str(ev)] + common)
        recovery[str(n)] = {k: v for k, v in json.loads(ev.read_text()).items()
                            if k in ("aupr", "auc")}
    metrics["recovery"] = recovery
    ns = sorted(counts)
    metrics["recovery_monotone"] = all(
        recovery[str(hi)][k] >= recovery[str(lo)][k]
        for lo, hi in zip(ns, ns[1:]) for k in ("aupr", "auc"))
    metrics["seconds"] = round(time.perf_counter() - started, 2)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return metrics


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--counts", default="1000,4000")
    p.add_argument("--epochs-init", type=int, default=100)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--threads", type=int, default=1)
    a = p.parse_args(argv)
    m = pipeline(a.out, a.seed, a.nodes, a.samples, [int(c) for c in a.counts.split(",")],
                 a.epochs_init, a.epochs, a.threads)
    print(json.dumps({k: m[k] for k in ("structure_ratio", "regression_ratio", "signs_correct",
                                        "min_r2", "recovery")}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
