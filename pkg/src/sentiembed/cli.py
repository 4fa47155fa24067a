"""Command-line entry point.

Every subcommand prints a one-line JSON summary on success. Failures print a
JSON error object on stderr and exit nonzero (2 for usage errors).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus
from .config import ConfigError, RunConfig, parse_config_file, parse_overrides

log = logging.getLogger("sentiembed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _write_json(path: Path, obj: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _set_threads(n: int) -> None:
    import torch
    torch.set_num_threads(max(1, n))


def _load_model(path: str):
    from .encoder import SentenceEncoder, load_checkpoint

    if not Path(path).is_file():
        raise FileNotFoundError(f"model checkpoint not found: {path}")
    enc = load_checkpoint(path)
    if not isinstance(enc, SentenceEncoder):
        raise ValueError(f"{path}: checkpoint has no tokenizer; cannot embed text")
    return enc


def _read_texts(path: str) -> tuple[list[str], list[str | None]]:
    """Texts (and labels when present) from JSONL records or plain lines."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input not found: {path}")
    texts, labels = [], []
    with open(p, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            if p.suffix == ".jsonl":
                obj = json.loads(line)
                texts.append(str(obj["text"]))
                labels.append(obj.get("label"))
            else:
                texts.append(line.rstrip("\n"))
                labels.append(None)
    return texts, labels


def _model_name(args, model_path: str) -> str:
    return getattr(args, "name", None) or Path(model_path).parent.name or Path(model_path).stem


# -- lexicon ------------------------------------------------------------------

def cmd_lexicon(args) -> dict:
    from .lexicon import convert_sentiwordnet, corpus_sentiword_fraction, load_lexicon

    if args.lexicon_cmd == "convert":
        n = convert_sentiwordnet(args.src, args.dst)
        return {"command": "lexicon convert", "records": n, "out": args.dst}
    lexicon = load_lexicon(args.lexicon)
    splits = corpus.load_dataset(args.corpus)
    fractions = {}
    for name in ("train", "valid", "test"):
        exs = getattr(splits, name)
        if exs:
            fractions[name] = corpus_sentiword_fraction(lexicon, [e.text for e in exs])
    return {"command": "lexicon stats", "dataset": splits.name, "lexicon_size": len(lexicon),
            "candidate_fraction": fractions}


# -- data ---------------------------------------------------------------------

def cmd_data(args) -> dict:
    if args.data_cmd == "build-sgts":
        examples = corpus.read_examples(args.inp)
        pairs = corpus.build_sgts_benchmark(examples, args.seed)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        corpus.write_sgts_pairs(out, pairs)
        return {"command": "data build-sgts", "n_examples": len(examples), "n_pairs": len(pairs),
                "n_same": sum(p.label for p in pairs), "out": str(out)}
    if args.data_cmd == "split-valid":
        examples = corpus.read_examples(args.inp)
        train, valid = corpus.make_validation_split(examples, args.fraction, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        corpus.write_examples(out / "train.jsonl", train)
        corpus.write_examples(out / "valid.jsonl", valid)
        return {"command": "data split-valid", "train": len(train), "valid": len(valid), "out": str(out)}
    if args.data_cmd == "synth":
        from .synthetic import write_toy_dataset
        splits = write_toy_dataset(args.out, seed=args.seed, n_train=args.train, n_valid=args.valid,
                                   n_test=args.test)
        return {"command": "data synth", "train": len(splits.train), "valid": len(splits.valid),
                "test": len(splits.test), "out": args.out}
    raise UsageError(f"unknown data command: {args.data_cmd}")


# -- pretrain -----------------------------------------------------------------

def _resolve_config(args) -> RunConfig:
    file_values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = parse_overrides(getattr(args, "set", None))
    if getattr(args, "profile", None):
        overrides.setdefault("profile", args.profile)
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("seed", str(args.seed))
    return RunConfig.resolve(file_values, overrides)


def cmd_pretrain(args) -> dict:
    from .encoder import build_encoder
    from .lexicon import load_lexicon
    from .masking import Tokenizer
    from .trainer import pretrain

    cfg = _resolve_config(args)
    cfg.validate(check_paths=True)
    _set_threads(cfg.num_threads)
    tcfg = cfg.train_config()
    out = Path(tcfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.output_dir = str(out)
    cfg.dump(out / "run.cfg")

    splits = corpus.load_dataset(cfg.dataset)
    train, valid = splits.train, splits.valid
    if not valid:
        train, valid = corpus.make_validation_split(train, cfg.valid_fraction, cfg.seed)
    lexicon = load_lexicon(cfg.lexicon)
    tokenizer = Tokenizer.train([e.text for e in train], mode=cfg.tokenizer_mode, max_len=cfg.max_len,
                                lexicon=lexicon, min_freq=cfg.min_freq)
    tokenizer.vocab.save(out / "vocab.txt")
    encoder = build_encoder(tokenizer, seed=cfg.seed, profile=cfg.profile, **cfg.encoder_overrides())
    quads = corpus.sample_quadruples(train, cfg.seed)
    benchmark = corpus.build_sgts_benchmark(valid, cfg.seed)
    corpus.write_sgts_pairs(out / "sgts_valid.jsonl", benchmark)
    best, train_log = pretrain(quads, benchmark, encoder, cfg.hyperparams(), tcfg, cfg.loss_selection())
    step, score = train_log.best
    summary = {"command": "pretrain", "dataset": splits.name, "quadruples": len(quads),
               "benchmark_pairs": len(benchmark), "best_step": step, "best_sgts": score,
               "checkpoint": str(best), "log": str(out / "training_log.jsonl"), "output_dir": str(out)}
    _write_json(out / "pretrain_summary.json", summary)
    return summary


# -- evaluation ---------------------------------------------------------------

def cmd_eval_sgts(args) -> dict:
    from .evaluation import alignment_uniformity, sgts_score

    enc = _load_model(args.model)
    pairs = corpus.read_sgts_pairs(args.pairs)
    report = sgts_score(enc, pairs)
    quality = alignment_uniformity(enc, pairs)
    result = {"kind": "sgts", "model": _model_name(args, args.model), "dataset": args.dataset or Path(args.pairs).stem,
              "spearman_rho": report.spearman_rho, "n_pairs": report.n_pairs, **quality}
    if args.out:
        _write_json(Path(args.out), {**result, "similarities": report.similarities})
    return result


def cmd_probe(args) -> dict:
    from .evaluation import probe_dataset

    enc = _load_model(args.model)
    splits = corpus.load_dataset(args.data)
    train, valid = splits.train, splits.valid
    if not valid:
        train, valid = corpus.make_validation_split(train, 0.1, args.seed or 0)
    if not splits.test:
        raise ValueError(f"{args.data}: probing needs a test split")
    grid = tuple(float(g) for g in args.grid.split(",")) if args.grid else None
    res = probe_dataset(enc, train, valid, splits.test, *((grid,) if grid else ()))
    result = {"kind": "probe", "model": _model_name(args, args.model), "dataset": args.dataset or splits.name,
              "accuracy": res.accuracy, "regularization": res.regularization,
              "valid_accuracy": res.valid_accuracy, "n_train": res.n_train, "n_valid": res.n_valid,
              "n_test": res.n_test}
    if args.out:
        _write_json(Path(args.out), result)
    return result


def cmd_fewshot(args) -> dict:
    from .evaluation import fewshot_eval

    cfg = _resolve_config(args)
    _set_threads(cfg.num_threads)
    enc = _load_model(args.model)
    splits = corpus.load_dataset(args.data)
    if not splits.test:
        raise ValueError(f"{args.data}: few-shot evaluation needs a test split")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(range(10))
    res = fewshot_eval(enc, splits.train, splits.test, args.K, seeds, cfg.fewshot_config())
    result = {"kind": "fewshot", "model": _model_name(args, args.model), "dataset": args.dataset or splits.name,
              **res.to_json()}
    if args.out:
        _write_json(Path(args.out), result)
    return {k: v for k, v in result.items() if k not in ("accuracies", "best_steps")}


def cmd_embed(args) -> dict:
    enc = _load_model(args.model)
    texts, _ = _read_texts(args.inp)
    emb = enc.embed(texts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"dim_{i}" for i in range(emb.shape[1])])
        w.writerows([[repr(float(v)) for v in row] for row in emb])
    return {"command": "embed", "n": len(texts), "dim": int(emb.shape[1]), "out": str(out)}


def _read_label_column(path: str) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] and rows[0][0].lower() == "label":
        rows = rows[1:]
    return [r[0] for r in rows if r]


def cmd_plot(args) -> dict:
    from .evaluation import pca_project, render_scatter, write_pca_csv

    emb = np.loadtxt(args.embeddings, delimiter=",", skiprows=1, ndmin=2)
    labels = _read_label_column(args.labels) if args.labels else [""] * len(emb)
    if len(labels) != len(emb):
        raise ValueError(f"{len(labels)} labels for {len(emb)} embeddings")
    res = pca_project(emb, k=2)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".csv":
        write_pca_csv(out, res.coords, labels)
    else:
        write_pca_csv(out.with_suffix(".csv"), res.coords, labels)
        render_scatter(out, res.coords, labels)
    return {"command": "plot", "n": len(emb), "rank_deficient": res.rank_deficient,
            "explained_variance": res.explained_variance.tolist(), "out": str(out)}


def cmd_query(args) -> dict:
    from .evaluation import rowwise_cosine

    if args.k <= 0:
        raise ValueError("k must be positive")
    enc = _load_model(args.model)
    texts, labels = _read_texts(args.candidates)
    if not texts:
        raise ValueError(f"{args.candidates}: no candidates")
    emb = enc.embed([args.query] + texts)
    sims = rowwise_cosine(np.repeat(emb[:1], len(texts), axis=0), emb[1:])
    order = sorted(range(len(texts)), key=lambda i: (-sims[i], i))[:args.k]
    return {"command": "query", "query": args.query,
            "results": [{"rank": r + 1, "text": texts[i], "label": labels[i], "score": float(sims[i])}
                        for r, i in enumerate(order)]}


# -- report -------------------------------------------------------------------

SECTIONS = ("sgts", "probe", "fewshot")


def build_report(run_dirs) -> dict:
    """Merge result JSON files under ``run_dirs`` into rows keyed by (model, dataset)."""
    from .evaluation import metric_correlation

    rows: dict[tuple[str, str], dict] = {}
    found = 0
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        if not run_dir.is_dir():
            raise FileNotFoundError(f"run directory not found: {run_dir}")
        for path in sorted(run_dir.rglob("*.json")):
            try:
                obj = json.loads(path.read_text(encoding="utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError):
                continue
            if not isinstance(obj, dict) or obj.get("kind") not in SECTIONS:
                continue
            found += 1
            key = (str(obj.get("model")), str(obj.get("dataset")))
            row = rows.setdefault(key, {"model": key[0], "dataset": key[1]})
            kind = obj["kind"]
            if kind == "sgts":
                row["sgts"] = obj["spearman_rho"]
                row["alignment"] = obj.get("alignment")
                row["uniformity"] = obj.get("uniformity")
            elif kind == "probe":
                row["probe_accuracy"] = obj["accuracy"]
            else:
                row[f"fewshot_{obj['K']}shot_mean"] = obj["mean"]
                row[f"fewshot_{obj['K']}shot_std"] = obj["std"]
    if not found:
        raise ValueError("no result files found in " + ", ".join(str(d) for d in run_dirs))
    ordered = [rows[k] for k in sorted(rows)]
    sections = {s: any(_has(r, s) for r in ordered) for s in SECTIONS}
    report = {"rows": ordered, "sections": {s: ("present" if v else "absent") for s, v in sections.items()}}
    corr_rows = []
    for r in ordered:
        fs = [k for k in r if k.startswith("fewshot_") and k.endswith("_mean")]
        if "sgts" in r and fs:
            corr_rows.append((r["sgts"], r[sorted(fs)[0]]))
    if len(corr_rows) >= 3:
        try:
            rho, p = metric_correlation([c[0] for c in corr_rows], [c[1] for c in corr_rows])
            report["correlation"] = {"pearson_rho": rho, "p_value": p, "n": len(corr_rows)}
        except ValueError as exc:
            report["correlation"] = {"error": str(exc)}
    else:
        report["correlation"] = "absent"
    return report


def _has(row: dict, section: str) -> bool:
    if section == "sgts":
        return "sgts" in row
    if section == "probe":
        return "probe_accuracy" in row
    return any(k.startswith("fewshot_") for k in row)


def format_report(report: dict) -> str:
    cols = ["model", "dataset", "sgts", "probe_accuracy"]
    extra = sorted({k for r in report["rows"] for k in r if k.startswith("fewshot_") and k.endswith("_mean")})
    cols += extra + ["alignment", "uniformity"]
    fmt = lambda v: "-" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))  # noqa: E731
    table = [cols] + [[fmt(r.get(c)) for c in cols] for r in report["rows"]]
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    for s, state in report["sections"].items():
        if state == "absent":
            lines.append(f"[{s}: absent]")
    corr = report.get("correlation")
    if isinstance(corr, dict) and "pearson_rho" in corr:
        lines.append(f"SgTS vs few-shot accuracy: pearson r={corr['pearson_rho']:.3f} "
                     f"p={corr['p_value']:.3g} (n={corr['n']})")
    return "\n".join(lines)


def cmd_report(args) -> dict:
    report = build_report(args.run_dir)
    out_dir = Path(args.out) if args.out else Path(args.run_dir[0])
    _write_json(out_dir / "report.json", report)
    text = format_report(report)
    (out_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
    if args.table:
        print(text, file=sys.stderr)
    return {"command": "report", "rows": len(report["rows"]), "sections": report["sections"],
            "correlation": report["correlation"], "out": str(out_dir / "report.json")}


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = _Parser(prog="sentiembed", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    lx = sub.add_parser("lexicon", help="lexicon utilities", parents=[common])
    lxs = lx.add_subparsers(dest="lexicon_cmd", required=True, parser_class=_Parser)
    st = lxs.add_parser("stats", help="candidate-word fraction per split", parents=[common])
    st.add_argument("corpus", help="dataset directory or split file")
    st.add_argument("--lexicon", required=True)
    cv = lxs.add_parser("convert", help="convert a SentiWordNet distribution file", parents=[common])
    cv.add_argument("--src", required=True)
    cv.add_argument("--dst", required=True)

    da = sub.add_parser("data", help="dataset utilities", parents=[common])
    das = da.add_subparsers(dest="data_cmd", required=True, parser_class=_Parser)
    bs = das.add_parser("build-sgts", help="build an SgTS pair benchmark", parents=[common])
    bs.add_argument("--in", dest="inp", required=True)
    bs.add_argument("--out", required=True)
    sv = das.add_parser("split-valid", help="carve a validation split out of train", parents=[common])
    sv.add_argument("--in", dest="inp", required=True)
    sv.add_argument("--fraction", type=float, default=0.1)
    sv.add_argument("--out", required=True)
    sy = das.add_parser("synth", help="write the templated toy corpus and lexicon", parents=[common])
    sy.add_argument("--out", required=True)
    sy.add_argument("--train", type=int, default=2000)
    sy.add_argument("--valid", type=int, default=400)
    sy.add_argument("--test", type=int, default=400)

    pt = sub.add_parser("pretrain", help="contrastive pre-training", parents=[common])
    pt.add_argument("--config")
    pt.add_argument("--profile", choices=["desk", "backbone"])
    pt.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    ev = sub.add_parser("eval-sgts", help="SgTS Spearman correlation", parents=[common])
    ev.add_argument("--model", required=True)
    ev.add_argument("--pairs", required=True)
    ev.add_argument("--name")
    ev.add_argument("--dataset")
    ev.add_argument("--out")

    pr = sub.add_parser("probe", help="linear probe on frozen embeddings", parents=[common])
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--grid", help="comma-separated L2 strengths")
    pr.add_argument("--name")
    pr.add_argument("--dataset")
    pr.add_argument("--out")

    fs = sub.add_parser("fewshot", help="K-shot fine-tuning over several seeds", parents=[common])
    fs.add_argument("--model", required=True)
    fs.add_argument("--data", required=True)
    fs.add_argument("-K", type=int, default=5)
    fs.add_argument("--seeds", help="comma-separated seeds (default 0..9)")
    fs.add_argument("--config")
    fs.add_argument("--profile", choices=["desk", "backbone"])
    fs.add_argument("--set", action="append", metavar="KEY=VALUE")
    fs.add_argument("--name")
    fs.add_argument("--dataset")
    fs.add_argument("--out")

    em = sub.add_parser("embed", help="write sentence embeddings as CSV", parents=[common])
    em.add_argument("--model", required=True)
    em.add_argument("--in", dest="inp", required=True, help="JSONL with 'text' or plain text lines")
    em.add_argument("--out", required=True)

    pl = sub.add_parser("plot", help="2-D PCA projection", parents=[common])
    pl.add_argument("--embeddings", required=True)
    pl.add_argument("--labels")
    pl.add_argument("--out", required=True, help=".csv for coordinates, .svg/.png for a scatter plot")

    qu = sub.add_parser("query", help="nearest neighbours by cosine", parents=[common])
    qu.add_argument("--model", required=True)
    qu.add_argument("--query", required=True)
    qu.add_argument("--candidates", required=True)
    qu.add_argument("-k", type=int, default=2)

    rp = sub.add_parser("report", help="merge result files into one report", parents=[common])
    rp.add_argument("run_dir", nargs="+")
    rp.add_argument("--out")
    rp.add_argument("--table", action="store_true", help="also print the table on stderr")
    return p


COMMANDS = {
    "lexicon": cmd_lexicon, "data": cmd_data, "pretrain": cmd_pretrain, "eval-sgts": cmd_eval_sgts,
    "probe": cmd_probe, "fewshot": cmd_fewshot, "embed": cmd_embed, "plot": cmd_plot, "query": cmd_query,
    "report": cmd_report,
}


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    args.seed = getattr(args, "seed", None)
    args.verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command in ("data",) and args.seed is None:
        args.seed = 0
    try:
        _emit(COMMANDS[args.command](args))
    except ConfigError as exc:
        print(json.dumps({"error": "config", "field": exc.key, "message": str(exc)}), file=sys.stderr)
        return 2
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
