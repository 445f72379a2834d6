"""Command line entry point: ``ngm <subcommand> ...``.

Exit status is 0 on success, 1 for user errors (bad flags, missing or
malformed inputs) and 2 for internal failures.  Every subcommand writes a
JSON run manifest next to its primary output.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("ngm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers ---------------------------------------------------------------

def _pairs(text: str | None) -> dict:
    """``a=1,b=x`` -> ``{"a": "1", "b": "x"}``."""
    out = {}
    if not text:
        return out
    for item in text.split(","):
        if "=" not in item:
            raise UsageError(f"expected name=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _typed_values(schema, raw: dict) -> dict:
    out = {}
    for k, v in raw.items():
        if k not in schema.names:
            raise UsageError(f"unknown feature {k!r}")
        col = schema[k]
        if col.is_numeric:
            try:
                out[k] = float(v)
            except ValueError:
                raise UsageError(f"feature {k!r} needs a number, got {v!r}") from None
        else:
            out[k] = v
    return out


def _hidden(text: str | None, n_in: int):
    if text is None:
        return None
    if text.endswith("x"):
        return max(1, int(round(float(text[:-1]) * n_in)))
    return int(text)


def _lambda(text: str):
    if text == "adaptive":
        return "adaptive", 1.0
    if text.startswith("fixed:"):
        return "fixed", float(text.split(":", 1)[1])
    try:
        return "fixed", float(text)
    except ValueError:
        raise UsageError(f"--lambda must be 'fixed:VALUE' or 'adaptive', got {text!r}") from None


def _need(path, flag):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{flag}: file not found: {path}")
    return p


def set_threads(n: int | None) -> int:
    env = os.environ.get("NGM_THREADS")
    if env:
        n = int(env)
    n = max(1, int(n or 1))
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(n)
    except ImportError:  # pragma: no cover
        pass
    from . import kernels
    if kernels.HAVE_NUMBA:
        import warnings

        import numba
        with warnings.catch_warnings():
            # numba reports an outdated TBB on first use of the thread pool
            warnings.simplefilter("ignore", numba.NumbaWarning)
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


def versions() -> dict:
    import scipy
    out = {"ngm": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__}
    try:
        import numba
        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        pass
    from . import kernels
    out["backend"] = kernels.backend()
    return out


def write_manifest(path, args, extra: dict, started: float) -> Path:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "argv")}
    manifest = {
        "command": args.command,
        "argv": getattr(args, "argv", None),
        "config": cfg,
        "seed": cfg.get("seed"),
        "versions": versions(),
        "timing": {"seconds": round(time.perf_counter() - started, 3)},
        **extra,
    }
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _manifest_path(out: Path) -> Path:
    if out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


# -- subcommands -----------------------------------------------------------

def cmd_synth(args):
    from .data import write_csv
    from .graph import write_edge_list
    from .synth import chain_graph, chain_precision, sample_mvn

    if args.nodes < 2 or args.samples < 1:
        raise UsageError("--nodes must be >= 2 and --samples >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    theta = chain_precision(args.nodes, rng)
    ds = sample_mvn(theta, args.samples, rng)
    write_csv(ds, out / "data.csv")
    np.savetxt(out / "theta.csv", theta.theta, delimiter=",", fmt="%.17g",
               header=",".join(ds.names), comments="")
    write_edge_list(chain_graph(args.nodes, theta.theta), out / "graph.edges")
    files = ["data.csv", "theta.csv", "graph.edges"]
    return _manifest_path(out), {"outputs": files}


def _load_table(args):
    from .data import FeatureSchema, load_csv

    schema = FeatureSchema.load(_need(args.schema, "--schema")) if args.schema else None
    return load_csv(_need(args.data, "--data"), schema)


def cmd_train(args):
    from .data import encode, fit_schema
    from .graph import read_graph
    from .inference import train_binned_variant
    from .learning import TrainConfig, fit_ngm
    from .projections import build_projection, fit_ngm_generic
    from .serialize import save_model
    from .graph import dependency_mask

    raw = _load_table(args)
    scaled, schema = fit_schema(raw, args.bins)
    graph = read_graph(_need(args.graph, "--graph"), nodes=schema.names)
    s = dependency_mask(graph)
    mode, lam = _lambda(args.lam)
    n_in = sum(schema.input_widths(False))
    cfg = TrainConfig(hidden=_hidden(args.hidden, n_in), layers=args.layers,
                      epochs_init=args.epochs_init, epochs=args.epochs, batch_size=args.batch_size,
                      lambda_mode=mode, lambda_value=lam, norm=args.norm, eps_log=args.eps_log,
                      seed=args.seed, val_split=args.val_split, lr=args.lr,
                      activation=args.activation)
    x = encode(scaled, schema)
    if args.projection:
        model = fit_ngm_generic(x, s, build_projection(schema), cfg, schema, graph=graph)
    else:
        model = fit_ngm(x, s, cfg, schema, graph=graph)
    has_numeric = any(c.is_numeric for c in schema)
    binned = args.binned if args.binned is not None else has_numeric
    if binned:
        vmode, vlam = _lambda(args.variant_lambda) if args.variant_lambda else (mode, lam)
        vcfg = TrainConfig(**{**cfg.to_json(), "lambda_mode": vmode, "lambda_value": vlam,
                              "hidden": _hidden(args.hidden, n_in)})
        model.variant = train_binned_variant(scaled, s, vcfg, schema, graph=graph)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    side = save_model(model, out)
    losses = {"model": model.final_losses}
    if model.variant is not None:
        losses["variant"] = model.variant.final_losses
    return _manifest_path(out), {"outputs": [out.name, side.name], "final_losses": losses,
                                 "structure_ratio": model.structure_ratio()}


def cmd_infer(args):
    from .inference import (InferenceQuery, conditional_distribution, gradient_map,
                            message_passing)
    from .serialize import load_model

    model = load_model(_need(args.model, "--model"))
    known = _typed_values(model.schema, _pairs(args.known))
    targets = [t.strip() for t in args.targets.split(",") if t.strip()]
    for t in targets:
        if t not in model.schema.names:
            raise UsageError(f"unknown target feature {t!r}")
    q = InferenceQuery(known, targets, max_iter=args.max_iter, eps=args.eps, lr=args.lr,
                       objective=args.objective)
    res = (gradient_map if args.method == "gradient" else message_passing)(model, q)
    result = {"method": args.method, **res.to_json()}
    if args.distribution:
        result["distributions"] = {t: conditional_distribution(model, q, t).to_json()
                                   for t in targets}
    text = json.dumps(result, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        return _manifest_path(out), {"outputs": [out.name], "result": result}
    sys.stdout.write(text)
    return None, {}


def cmd_sample(args):
    from .data import write_csv
    from .sampling import SamplerConfig, sample_batch
    from .serialize import load_model

    model = load_model(_need(args.model, "--model"))
    presets = _typed_values(model.schema, _pairs(args.preset))
    cfg = SamplerConfig(count=args.count, ordering=args.ordering, seed=args.seed, presets=presets,
                        max_iter=args.max_iter, lr=args.lr)
    ds = sample_batch(model, None, cfg)
    out = Path(args.out)
    write_csv(ds, out)
    return _manifest_path(out), {"outputs": [out.name], "count": args.count}


def cmd_eval(args):
    from .data import load_csv
    from .graph import read_graph
    from .synth import recovery_oracle, score_recovery

    ds = load_csv(_need(args.samples, "--samples"))
    g = read_graph(_need(args.true, "--true"), nodes=ds.names)
    if any(not c.is_numeric for c in ds.schema):
        raise UsageError("eval needs an all-numeric sample table")
    x = np.column_stack([ds.column(n) for n in ds.names])
    adj = g.adjacency(directed=False)
    met = score_recovery(adj, recovery_oracle(x, args.ridge))
    result = {"aupr": met.aupr, "auc": met.auc, "samples": int(len(x))}
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        return _manifest_path(out), {"outputs": [out.name], "metrics": result}
    return None, {}


def cmd_plot_dependency(args):
    from .plotting import write_line_svg
    from .serialize import load_model
    from .synth import dependency_curve, linear_fit

    model = load_model(_need(args.model, "--model"))
    try:
        neighbor, target = [p.strip() for p in args.pair.split(",")]
    except ValueError:
        raise UsageError("--pair must be NEIGHBOR,TARGET") from None
    for f in (neighbor, target):
        if f not in model.schema.names:
            raise UsageError(f"unknown feature {f!r}")
    col = model.schema[neighbor]
    if not col.is_numeric or not model.schema[target].is_numeric:
        raise UsageError("dependency curves need numeric features")
    grid = col.mean + col.std * np.linspace(-args.span, args.span, args.points)
    method = "gradient" if args.method == "gradient" else "mp"
    curve = dependency_curve(model, target, neighbor, grid, method=method)
    slope, r2 = linear_fit(curve)
    outs = [p.strip() for p in args.out.split(",")]
    csv_path = Path(outs[0])
    lines = [f"{neighbor},{target}"] + [f"{a:.17g},{b:.17g}" for a, b in curve]
    csv_path.write_text("\n".join(lines) + "\n")
    written = [csv_path.name]
    svg = next((Path(p) for p in outs[1:] if p.endswith(".svg")), None)
    if svg is not None:
        write_line_svg(svg, curve[:, 0], curve[:, 1], xlabel=neighbor, ylabel=target,
                       title=f"{target} given {neighbor}")
        written.append(svg.name)
    # slope in standardised units for comparison across features
    std_slope = slope * col.std / model.schema[target].std
    result = {"neighbor": neighbor, "target": target, "slope": slope,
              "standardized_slope": std_slope, "r2": r2}
    return _manifest_path(csv_path), {"outputs": written, "curve": result}


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ngm", description="Neural graphical models: train, query and sample.")
    p.add_argument("--version", action="version", version=f"ngm {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--threads", type=int, default=1,
                        help="thread cap for numeric kernels (NGM_THREADS overrides)")
        sp.add_argument("--log-level", default="WARNING")

    sp = sub.add_parser("synth", help="generate chain Gaussian data")
    sp.add_argument("--nodes", type=int, default=10)
    sp.add_argument("--samples", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output directory")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="fit a model to a table and a graph")
    sp.add_argument("--data", required=True)
    sp.add_argument("--graph", required=True, help="edge list or adjacency CSV")
    sp.add_argument("--schema", help="schema JSON (otherwise inferred)")
    sp.add_argument("--hidden", help="hidden width, absolute or '2x' of input units")
    sp.add_argument("--layers", type=int, default=2)
    sp.add_argument("--epochs-init", type=int, default=100)
    sp.add_argument("--epochs", type=int, default=400)
    sp.add_argument("--batch-size", type=int, default=128)
    sp.add_argument("--lambda", dest="lam", default="fixed:1.0", help="fixed:VALUE or adaptive")
    sp.add_argument("--variant-lambda", help="lambda for the binned variant (default: --lambda)")
    sp.add_argument("--norm", choices=("l1", "l2"), default="l2")
    sp.add_argument("--eps-log", type=float, default=1e-12)
    sp.add_argument("--activation", choices=("relu", "tanh"), default="relu")
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--val-split", type=float, default=0.1)
    sp.add_argument("--bins", type=int, default=20)
    sp.add_argument("--binned", dest="binned", action="store_true", default=None,
                    help="also train the binned variant (default when numeric features exist)")
    sp.add_argument("--no-binned", dest="binned", action="store_false")
    sp.add_argument("--projection", action="store_true",
                    help="wrap the core in per-feature encoder/decoder layers")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="conditional point estimates and distributions")
    sp.add_argument("--model", required=True)
    sp.add_argument("--known", default="")
    sp.add_argument("--targets", required=True)
    sp.add_argument("--method", choices=("gradient", "mp"), default="gradient")
    sp.add_argument("--objective", choices=("unknown", "known", "all"), default="unknown")
    sp.add_argument("--distribution", action="store_true")
    sp.add_argument("--max-iter", type=int, default=2000)
    sp.add_argument("--eps", type=float, default=1e-6)
    sp.add_argument("--lr", type=float, default=1e-2)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("sample", help="draw synthetic rows")
    sp.add_argument("--model", required=True)
    sp.add_argument("--count", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--preset", default="")
    sp.add_argument("--ordering", choices=("bfs", "topological"), default="bfs")
    sp.add_argument("--max-iter", type=int, default=500)
    sp.add_argument("--lr", type=float, default=5e-2)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="score edge recovery of a sample table")
    sp.add_argument("--true", required=True, help="true graph (edge list or adjacency CSV)")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--ridge", type=float, default=None)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("plot-dependency", help="dependency curve table and SVG")
    sp.add_argument("--model", required=True)
    sp.add_argument("--pair", required=True, help="NEIGHBOR,TARGET")
    sp.add_argument("--points", type=int, default=21)
    sp.add_argument("--span", type=float, default=2.0, help="grid half-width in std units")
    sp.add_argument("--method", choices=("gradient", "mp"), default="gradient")
    sp.add_argument("--out", required=True, help="curve.csv[,curve.svg]")
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_plot_dependency)
    return p


def _user_errors():
    from .data import DataError
    from .graph import GraphError
    from .inference import InferenceError
    from .projections import ProjectionError
    from .serialize import ModelFormatError
    return (UsageError, DataError, GraphError, InferenceError, ProjectionError, ModelFormatError,
            FileNotFoundError, ValueError)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help()
        return 1
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args.argv = argv
    started = time.perf_counter()
    try:
        set_threads(args.threads)
        manifest, extra = args.func(args)
        if manifest is not None:
            write_manifest(manifest, args, extra, started)
        return 0
    except _user_errors() as exc:
        sys.stderr.write(f"ngm {args.command}: error: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        sys.stderr.write(f"ngm {args.command}: internal error: {exc}\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
