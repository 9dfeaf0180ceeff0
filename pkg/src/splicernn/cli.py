"""Command-line entry point: prepare, train, eval, predict, synth.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import config as runconfig
from . import ingest, synth
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .ingest import IngestError, label_names
from .model import SpliceModel, predict
from .numerics import NumericalError, child_seed
from .trainer import emit_metrics, evaluate, train

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("splicernn")


class UsageError(ValueError):
    pass


def _open_text(path: str, what: str):
    try:
        return open(path, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {what} {path!r}: {exc.strerror}") from None


def _kv(pairs) -> str:
    return "".join(f"{k}: {v}\n" for k, v in pairs)


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    if args.window <= 0 or args.window % 2:
        raise UsageError(f"--window must be even and positive, got {args.window}")
    with _open_text(args.fasta, "FASTA") as fh:
        try:
            genomes = {g.id: g for g in ingest.parse_fasta(fh)}
        except IngestError as exc:
            raise IngestError(f"{args.fasta}: {exc}") from None
    with _open_text(args.annotation, "annotation") as fh:
        try:
            raw = ingest.parse_exon_annotation(fh, keep_duplicates=True)
        except IngestError as exc:
            raise IngestError(f"{args.annotation}: {exc}") from None
    unique = list(dict.fromkeys(raw))
    for exon in unique:
        if exon.sequence_id not in genomes:
            raise IngestError(f"{args.annotation}: line {exon.line}: unknown sequence {exon.sequence_id!r}")
    sampled = ingest.sample_exons(unique, args.sample_exons, child_seed(args.seed, "sample"))
    stats = ingest.ExtractionStats()
    windows = []
    for exon in sampled:
        try:
            windows += ingest.extract_windows(genomes[exon.sequence_id], exon, args.window, stats)
        except IngestError as exc:
            raise IngestError(f"{args.annotation}: {exc}") from None
    if not windows:
        raise UsageError("no windows could be extracted")
    split = ingest.split_dataset(windows, args.test_ratio, child_seed(args.seed, "split"))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train.tsv", split.train), ("test.tsv", split.test)):
        with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
            ingest.write_windows(part, fh, args.num_classes)

    names = label_names(3)
    report = [
        ("exons_read", len(raw)),
        ("exons_unique", len(unique)),
        ("exons_sampled", len(sampled)),
        ("windows_produced", stats.total_produced),
        ("windows_dropped", stats.total_dropped),
        ("dropped_out_of_range", stats.out_of_range),
        ("dropped_ambiguous", stats.ambiguous),
    ]
    report += [(f"dropped.{names[k]}", stats.dropped[k]) for k in range(3)]
    report += [(f"produced.{names[k]}", stats.produced[k]) for k in range(3)]
    report += [("train_windows", len(split.train)), ("test_windows", len(split.test))]
    text = _kv(report)
    (out / "stats.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------


def _load_dataset(path, w: int, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    with _open_text(str(path), "dataset") as fh:
        try:
            data = ingest.read_windows(fh, w)
        except IngestError as exc:
            raise IngestError(f"{path}: {exc}") from None
    if data.num_classes is not None and data.num_classes != num_classes:
        raise UsageError(f"{path}: dataset has {data.num_classes}-class labels but the model has "
                         f"num_classes={num_classes}")
    if not data.windows:
        raise UsageError(f"{path}: dataset is empty")
    return data.arrays()


def cmd_train(args) -> int:
    cfg = runconfig.load(args.config, args.set or [])
    codes, labels = _load_dataset(cfg.train_path, cfg.model.window_length, cfg.model.num_classes)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "resolved_config.txt").write_text(runconfig.render(cfg), encoding="utf-8")
    model = SpliceModel.init(cfg.model)
    log.info("model %s, %d parameters", "-".join(map(str, cfg.model.widths)), model.num_parameters())
    model, history, optimizer = train(model, codes, labels, cfg.train)
    save_checkpoint(cfg.out_dir / "checkpoint.bin", model, optimizer)
    emit_metrics(history, cfg.out_dir / "metrics.csv")
    last = history[-1]
    sys.stdout.write(_kv([("architecture", "-".join(map(str, cfg.model.widths))),
                          ("parameters", model.num_parameters()),
                          ("epochs", len(history)), ("final_loss", repr(last.loss)),
                          ("final_accuracy", repr(last.accuracy))]))
    if cfg.test_path:
        t_codes, t_labels = _load_dataset(cfg.test_path, cfg.model.window_length, cfg.model.num_classes)
        report = evaluate(model, t_codes, t_labels).to_text()
        (cfg.out_dir / "eval.txt").write_text(report, encoding="utf-8")
        sys.stdout.write(report)
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    codes, labels = _load_dataset(args.dataset, model.config.window_length, model.config.num_classes)
    report = evaluate(model, codes, labels).to_text()
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def _windows_from_file(path, w: int, errors: list) -> list[tuple[str, np.ndarray]]:
    out = []
    with _open_text(path, "windows") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) == 1:
                text, prov = fields[0], f"line{lineno}:{lineno}"
            elif len(fields) == 3:
                _, text, prov = fields
            else:
                errors.append(f"{path}: line {lineno}: expected 1 or 3 tab-separated fields")
                continue
            if len(text) != w:
                errors.append(f"{path}: line {lineno}: window length {len(text)} != {w}")
                continue
            codes = ingest.encode(text)
            if np.any(codes == ingest.N):
                errors.append(f"{path}: line {lineno}: window contains non-ACGT symbols")
                continue
            out.append((prov, codes))
    return out


def _windows_from_positions(fasta, positions, w: int, errors: list) -> list[tuple[str, np.ndarray]]:
    with _open_text(fasta, "FASTA") as fh:
        genomes = {g.id: g for g in ingest.parse_fasta(fh)}
    half = w // 2
    out = []
    with _open_text(positions, "positions") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            where = f"{positions}: line {lineno}"
            if len(fields) not in (2, 3):
                errors.append(f"{where}: expected sequence_id<TAB>center[<TAB>strand]")
                continue
            seq_id, center = fields[0], fields[1]
            strand = fields[2].strip() if len(fields) == 3 else "+"
            try:
                center = int(center)
            except ValueError:
                errors.append(f"{where}: non-integer center")
                continue
            genome = genomes.get(seq_id)
            if genome is None:
                errors.append(f"{where}: unknown sequence {seq_id!r}")
                continue
            if center - half < 0 or center + half > genome.length:
                errors.append(f"{where}: window around {center} runs off {seq_id}")
                continue
            codes = genome.bases[center - half:center + half]
            if np.any(codes == ingest.N):
                errors.append(f"{where}: window contains N")
                continue
            if strand == "-":
                codes = ingest.reverse_complement(codes)
            out.append((f"{seq_id}:{center}", codes))
    return out


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    w = model.config.window_length
    errors: list[str] = []
    if args.windows:
        items = _windows_from_file(args.windows, w, errors)
    elif args.fasta and args.positions:
        items = _windows_from_positions(args.fasta, args.positions, w, errors)
    else:
        raise UsageError("give --windows, or both --fasta and --positions")
    names = label_names(model.config.num_classes)
    counts = Counter()
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        if items:
            labels, probs = predict(model, np.stack([codes for _, codes in items]))
            for (prov, _), label, p in zip(items, labels, probs):
                counts[int(label)] += 1
                fh.write(f"{prov}\t{names[label]}\t" + ",".join(f"{v:.10g}" for v in p) + "\n")
    for err in errors:
        print(f"error: {err}", file=sys.stderr)
    sys.stdout.write(_kv([("windows", len(items)), ("rejected", len(errors))]
                         + [(f"predicted.{name}", counts[k]) for k, name in enumerate(names)]))
    return EXIT_VALIDATION if errors else EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    motifs = synth.MotifConfig(args.donor_motif, args.acceptor_motif, args.nonsite_mode)
    windows = synth.generate(args.n_per_class, args.window, args.seed, motifs)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        ingest.write_windows(windows, fh, args.num_classes)
    sys.stdout.write(_kv([("windows", len(windows)), ("per_class", args.n_per_class),
                          ("window_length", args.window), ("nonsite_mode", args.nonsite_mode)]))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splicernn", description="Recurrent-network splice junction prediction.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("prepare", help="extract labeled windows from a genome and exon annotation",
                       description="Extract acceptor/non-site/donor windows around annotated exons and "
                                   "write a grouped train/test split plus a statistics report.")
    p.add_argument("--fasta", required=True, help="genome FASTA file")
    p.add_argument("--annotation", required=True, help="exon TSV: sequence_id, start, end[, strand] (0-based, end exclusive)")
    p.add_argument("--out", required=True, help="output directory for train.tsv, test.tsv, stats.txt")
    p.add_argument("--window", type=int, default=60, help="window length w, even (default 60)")
    p.add_argument("--seed", type=int, default=0, help="seed for exon sampling and the split (default 0)")
    p.add_argument("--test-ratio", type=float, default=0.2, help="fraction of exons held out (default 0.2)")
    p.add_argument("--sample-exons", type=int, default=None, help="use a seeded uniform sample of this many unique exons")
    p.add_argument("--num-classes", type=int, choices=(2, 3), default=3, help="3 = acceptor/nonsite/donor, 2 = site/nonsite")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model from a key=value config file",
                       description="Train a model. Writes checkpoint.bin, metrics.csv and resolved_config.txt "
                                   "into out_dir (and eval.txt when test_path is set).",
                       epilog=runconfig.describe_keys(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", help="config file of key = value lines")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file",
                       description="Print accuracy, per-class/macro/micro F1 and the confusion matrix.")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--dataset", required=True, help="dataset file (label, bases, provenance)")
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict classes for windows",
                       description="Predict from a windows file, or from a FASTA plus a positions file "
                                   "(sequence_id, center[, strand]).")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--windows", help="one window per line, or dataset-format lines")
    p.add_argument("--fasta", help="genome FASTA (with --positions)")
    p.add_argument("--positions", help="TSV of sequence_id, center[, strand] (with --fasta)")
    p.add_argument("--out", required=True, help="prediction output file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate planted-motif synthetic windows",
                       description="Uniform-random windows; donors get the donor motif at [w/2, ...), acceptors "
                                   "the acceptor motif ending at w/2-1, non-sites nothing planted.")
    p.add_argument("--n-per-class", type=int, required=True, help="windows per class")
    p.add_argument("--window", type=int, default=60, help="window length w, even, >= 4 (default 60)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--donor-motif", default="GT", help="motif planted right of center in donors (default GT)")
    p.add_argument("--acceptor-motif", default="AG", help="motif planted left of center in acceptors (default AG)")
    p.add_argument("--nonsite-mode", choices=("random", "exclusive"), default="random",
                   help="random: motifs may occur by chance; exclusive: resample non-sites containing a motif")
    p.add_argument("--num-classes", type=int, choices=(2, 3), default=3, help="label scheme of the output file")
    p.add_argument("--out", required=True, help="output dataset file")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; that code is reserved for I/O here
        return EXIT_VALIDATION if exc.code == 2 else exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CheckpointError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
