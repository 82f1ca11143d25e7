"""``gsnn`` command line: encode, query, train, sweep, induce, export, inspect."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from . import __version__
from .config import Config, ConfigError, load_config
from .datasets import INDUCTION_TRIPLES, chain_split
from .engram import RegistryError
from .kg import ParseError, Triple, parse_relation_meta, parse_triples, write_relation_meta, \
    write_triples
from .network import Network
from .protocols import (TransitivityTask, encode_graph, run_induction, sweep_inhibitory_ratio,
                        train_transitivity, write_metrics, write_sweep)
from .query import export_reasoning_trace, query, verify_triple
from .snapshot import SnapshotError, export_json, load_snapshot, save_snapshot, snapshot_info

EXIT_OK, EXIT_ASSERTION, EXIT_INPUT = 0, 1, 2
# keys fixed by an existing snapshot's arena
STRUCTURAL = {"n_neurons", "sparsity", "inhibitory_fraction", "seed", "dt_ms"}

log = logging.getLogger("gsnn")


class InputError(Exception):
    """Bad user input (maps to exit status 2)."""


class AssertionFailure(Exception):
    """An experiment finished but missed the requested target (exit status 1)."""


# --------------------------------------------------------------------------
# helpers


def _overrides(args) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for item in args.set or []:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = yaml.safe_load(v)
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    return out


def _experiment(args) -> dict[str, Any]:
    path = getattr(args, "experiment", None)
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InputError(f"experiment file not found: {p}")
    doc = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict):
        raise InputError(f"{p} must hold a mapping")
    return doc


def _config(args, experiment: Optional[dict] = None) -> Config:
    exp_cfg = dict((experiment or {}).get("config") or {})
    if "seed" in (experiment or {}):
        exp_cfg.setdefault("seed", experiment["seed"])
    cfg = load_config(args.config, **{**exp_cfg, **_overrides(args)}) if exp_cfg else \
        load_config(args.config, **_overrides(args))
    return cfg


def _pick(args, name: str, experiment: dict, default=None):
    val = getattr(args, name, None)
    if val is not None:
        return val
    return experiment.get(name, default)


def _out_dir(path, cfg: Config) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(cfg.dump(), encoding="utf-8")
    handler = logging.FileHandler(out / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return out


def _load_net(path, args) -> Network:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"snapshot not found: {p}")
    net = load_snapshot(p)
    ov = _overrides(args)
    ov.pop("seed", None)
    bad = sorted(set(ov) & STRUCTURAL)
    if bad:
        raise InputError(f"cannot override {bad} on an existing snapshot")
    if ov:
        from .config import from_mapping
        net.cfg = from_mapping(ov, net.cfg)
        net._sim = None
    return net


def _read_triples(path) -> list[Triple]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"triples file not found: {p}")
    return parse_triples(p, dedupe=True)


def _labels(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


# --------------------------------------------------------------------------
# commands


def cmd_encode(args) -> int:
    cfg = _config(args)
    triples = _read_triples(args.triples)
    out = _out_dir(args.out, cfg)
    t0 = time.perf_counter()
    net = Network.from_triples(cfg, triples)
    encode_graph(net, triples)
    snap = save_snapshot(net, Path(args.snapshot) if args.snapshot else out / "snapshot.gsnn")
    wall = time.perf_counter() - t0
    log.info("encoded %d triples in %.2fs", len(triples), wall)
    print(f"encoded {len(triples)} triples ({len(net.registry)} engrams) in {wall:.2f}s -> {snap}")
    return EXIT_OK


def cmd_query(args) -> int:
    net = _load_net(args.snapshot, args)
    res = query(net, args.head, args.relation, theta=args.theta)
    for rank, c in enumerate(res.candidates[:args.top], start=1):
        ttt = "-" if c.time_to_threshold_ms is None else f"{c.time_to_threshold_ms:g}"
        mark = "*" if c.peak >= res.theta else " "
        print(f"{rank:3d} {mark} {c.label}\t{c.peak:.4f}\t{ttt}")
    print(f"answers: {', '.join(res.answers) if res.answers else '(none)'}")
    if args.trace:
        path = Path(args.trace)
        if path.suffix == "":
            path.mkdir(parents=True, exist_ok=True)
            path = path / f"{args.head}_{args.relation}.csv"
        export_reasoning_trace(res, path)
        print(f"trace -> {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    net = _load_net(args.snapshot, args)
    ok, series = verify_triple(net, args.head, args.relation, args.tail, theta=args.theta)
    peak = float(series.max()) if series.size else 0.0
    print(f"{args.head}\t{args.relation}\t{args.tail}\t{'true' if ok else 'false'}\t{peak:.4f}")
    return EXIT_OK if ok else EXIT_ASSERTION


def cmd_export_trace(args) -> int:
    net = _load_net(args.snapshot, args)
    watch = _labels(args.watch) if args.watch else None
    res = query(net, args.head, args.relation, watch=watch)
    path = export_reasoning_trace(res, args.output)
    print(f"trace -> {path}")
    return EXIT_OK


def cmd_snapshot_info(args) -> int:
    p = Path(args.snapshot)
    if not p.is_file():
        raise InputError(f"snapshot not found: {p}")
    info = snapshot_info(p)
    print(json.dumps(info, indent=2, sort_keys=True))
    if args.json:
        export_json(load_snapshot(p), args.json)
    return EXIT_OK


def _transitivity_data(args, exp: dict, cfg: Config):
    dataset = _pick(args, "dataset", exp)
    meta_path = _pick(args, "meta", exp)
    fraction = float(_pick(args, "mask", exp, 0.3))
    if dataset:
        if not meta_path:
            raise InputError("--dataset needs --meta")
        triples = _read_triples(dataset)
        mp = Path(meta_path)
        if not mp.is_file():
            raise InputError(f"metadata file not found: {mp}")
        meta = parse_relation_meta(mp)
        missing = sorted({t.relation for t in triples} - set(meta))
        if missing:
            raise InputError(f"relations without metadata: {missing}")
        split = chain_split(triples, meta, fraction, seed=[cfg.seed, 0x5B1])
        return split, meta
    return _task(args, exp, fraction).build(cfg.seed)


def _task(args, exp: dict, fraction: float = 0.3) -> TransitivityTask:
    opts = {"mask_fraction": fraction}
    for key, field_name, cast in (("chains", "chains_per_relation", int),
                                  ("neurons", "n_neurons", int), ("sparsity", "sparsity", float)):
        value = _pick(args, key, exp)
        if value is not None:
            opts[field_name] = cast(value)
    return TransitivityTask(**opts)


def cmd_train_transitivity(args) -> int:
    exp = _experiment(args)
    cfg = _task(args, exp).arena(_config(args, exp))
    epochs = int(_pick(args, "epochs", exp, 20))
    split, meta = _transitivity_data(args, exp, cfg)
    out = _out_dir(args.out, cfg)
    write_triples(split.train, out / "train.tsv")
    write_triples(split.masked, out / "masked.tsv")
    write_relation_meta(meta, out / "meta.tsv")
    if args.resume:
        net = _load_net(args.resume, args)
    else:
        net = Network.from_triples(cfg, split.full)
        encode_graph(net, split.train)

    def report(m):
        log.info("epoch %d accuracy %.4f", m.epoch, m.accuracy)
        print(f"epoch {m.epoch:3d}  accuracy {m.accuracy:.4f}  mean_reward {m.mean_reward:+.3f}",
              flush=True)

    net, hist = train_transitivity(net, split, meta, epochs, on_epoch=report)
    write_metrics(hist, out / "metrics.csv")
    save_snapshot(net, out / "snapshot.gsnn")
    target = _pick(args, "min_accuracy", exp)
    if target is not None and (not hist or hist[-1].accuracy < float(target)):
        raise AssertionFailure(f"final accuracy below {target}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    exp = _experiment(args)
    cfg = _config(args, exp)
    ratios = args.ratios if args.ratios is not None else exp.get("ratios",
                                                                 [0, 0.05, 0.1, 0.15, 0.2, 0.3])
    if isinstance(ratios, str):
        ratios = [float(x) for x in _labels(ratios)]
    epochs = int(_pick(args, "epochs", exp, 4))
    task = _task(args, exp)
    out = _out_dir(args.out, task.arena(cfg))
    rows = sweep_inhibitory_ratio(cfg, [float(r) for r in ratios], epochs, task,
                                  jobs=int(args.jobs or 1))
    write_sweep(rows, out / "sweep.csv")
    for r, acc in rows:
        print(f"{r:g}\t{acc:.4f}")
    best = max(rows, key=lambda x: x[1])
    print(f"peak accuracy at inhibitory fraction {best[0]:g}")
    return EXIT_OK


def cmd_induce(args) -> int:
    exp = _experiment(args)
    cfg = _config(args, exp)
    dataset = _pick(args, "dataset", exp)
    triples = _read_triples(dataset) if dataset else list(INDUCTION_TRIPLES)
    co_stim = _pick(args, "co_stim", exp, "Biden,Putin")
    co_stim = _labels(co_stim) if isinstance(co_stim, str) else list(co_stim)
    extra = [x for x in co_stim if x not in {l for t in triples for l in (t.head, t.tail)}]
    duration = float(_pick(args, "duration", exp, 500.0))
    verify = _pick(args, "verify", exp)
    if isinstance(verify, str):
        verify = _labels(verify)
    if verify is not None and len(verify) != 3:
        raise InputError("--verify expects head,relation,tail")
    out = _out_dir(args.out, cfg)
    # labels outside the dataset get neurons of their own (the unrelated-entity control)
    net = Network.from_triples(cfg, triples, isolated_entities=extra)
    encode_graph(net, triples)
    net, report = run_induction(net, co_stim, duration, known=triples,
                                verify=tuple(verify) if verify else None)
    report.write_tsv(out / "emergent.tsv")
    save_snapshot(net, out / "snapshot.gsnn")
    for t in report.emergent:
        print(f"emergent\t{t}")
    if not report.emergent:
        print("no emergent triples")
    if report.verification is not None:
        h, r, t, ok, peak = report.verification
        print(f"verify\t{h}\t{r}\t{t}\t{'true' if ok else 'false'}\t{peak:.4f}")
    expect = _pick(args, "expect", exp)
    if expect:
        want = Triple(*_labels(expect)) if isinstance(expect, str) else Triple(*expect)
        if want not in report.emergent:
            raise AssertionFailure(f"expected emergent triple {want} not reported")
    if report.verification is not None and not report.verification[3]:
        raise AssertionFailure("verification query did not reach the threshold")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (default: $GSNN_CONFIG)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers (sweep)")

    p = argparse.ArgumentParser(prog="gsnn", description="Population-coded spiking memory "
                                "for knowledge-graph triples.")
    p.add_argument("--version", action="version", version=f"gsnn {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("encode", parents=[common], help="encode a triples TSV into a snapshot")
    s.add_argument("triples")
    s.add_argument("-o", "--out", required=True, help="output directory")
    s.add_argument("--snapshot", help="snapshot path (default OUT/snapshot.gsnn)")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("query", parents=[common], help="rank tails for (head, relation)")
    s.add_argument("snapshot")
    s.add_argument("head")
    s.add_argument("relation")
    s.add_argument("--theta", type=float)
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--trace", help="write the similarity trace (file or directory)")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("verify", parents=[common], help="check one triple (exit 1 if false)")
    s.add_argument("snapshot")
    s.add_argument("head")
    s.add_argument("relation")
    s.add_argument("tail")
    s.add_argument("--theta", type=float)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("train-transitivity", parents=[common],
                       help="reward-driven training on masked chain completions")
    s.add_argument("--experiment", help="YAML experiment description")
    s.add_argument("--dataset", help="triples TSV (default: synthetic chains)")
    s.add_argument("--meta", help="relation<TAB>0|1 transitivity file")
    s.add_argument("--mask", type=float, help="masked fraction (default 0.3)")
    s.add_argument("--chains", type=int, help="synthetic chains per relation")
    s.add_argument("--neurons", type=int, help="arena size for the run (default 2000)")
    s.add_argument("--sparsity", type=float, help="engram fraction for the run (default 0.025)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--resume", help="start from this snapshot instead of encoding")
    s.add_argument("--min-accuracy", type=float, dest="min_accuracy")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_train_transitivity)

    s = sub.add_parser("sweep-inhibition", parents=[common],
                       help="final accuracy versus inhibitory fraction")
    s.add_argument("--experiment")
    s.add_argument("--ratios", help="comma-separated fractions")
    s.add_argument("--chains", type=int, help="synthetic chains per relation")
    s.add_argument("--neurons", type=int, help="arena size for the run (default 2000)")
    s.add_argument("--sparsity", type=float, help="engram fraction for the run (default 0.025)")
    s.add_argument("--epochs", type=int)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("induce", parents=[common], help="co-stimulation induction experiment")
    s.add_argument("--experiment")
    s.add_argument("--dataset", help="triples TSV (default: the six president triples)")
    s.add_argument("--co-stim", dest="co_stim", help="comma-separated labels")
    s.add_argument("--duration", type=float, help="co-stimulation length in ms")
    s.add_argument("--verify", help="head,relation,tail to query afterwards")
    s.add_argument("--expect", help="head,relation,tail that must be reported")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_induce)

    s = sub.add_parser("export-trace", parents=[common], help="write a query trace CSV/JSON")
    s.add_argument("snapshot")
    s.add_argument("head")
    s.add_argument("relation")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--watch", help="comma-separated candidate labels")
    s.set_defaults(func=cmd_export_trace)

    s = sub.add_parser("snapshot-info", parents=[common], help="summarise a snapshot")
    s.add_argument("snapshot")
    s.add_argument("--json", help="also write a lossless JSON export here")
    s.set_defaults(func=cmd_snapshot_info)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "sweep-inhibition" and args.ratios is not None:
        try:
            args.ratios = [float(x) for x in _labels(args.ratios)]
        except ValueError:
            print(f"error: bad --ratios {args.ratios!r}", file=sys.stderr)
            return EXIT_INPUT
    try:
        return args.func(args)
    except AssertionFailure as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERTION
    except (InputError, ConfigError, ParseError, RegistryError, SnapshotError,
            FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        for h in list(log.handlers):
            log.removeHandler(h)
            h.close()


if __name__ == "__main__":
    sys.exit(main())
