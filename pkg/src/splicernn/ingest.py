"""Genome/annotation parsing, boundary window extraction and dataset files.

Nucleotides are stored as small integer codes: A=0, C=1, G=2, T=3 and
N=4 for anything else. Windows containing N never reach the model.
"""
from __future__ import annotations

import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .numerics import make_rng

A, C, G, T, N = range(5)
ALPHABET = "ACGTN"
WINDOW_LENGTH = 60

ACCEPTOR, NONSITE, DONOR = 0, 1, 2
LABELS3 = ("acceptor", "nonsite", "donor")
# binary task: acceptor and donor merge into "site"; nonsite keeps index 1
SITE = 0
LABELS2 = ("site", "nonsite")

_CODE_TABLE = np.full(256, N, dtype=np.uint8)
for _i, _ch in enumerate("ACGT"):
    _CODE_TABLE[ord(_ch)] = _i
    _CODE_TABLE[ord(_ch.lower())] = _i
_COMPLEMENT = np.array([T, G, C, A, N], dtype=np.uint8)


class IngestError(ValueError):
    """Malformed FASTA, annotation or dataset input."""


def encode(text: str) -> np.ndarray:
    """Map a nucleotide string to codes; unknown symbols become N."""
    raw = np.frombuffer(text.encode("latin-1", errors="replace"), dtype=np.uint8)
    return _CODE_TABLE[raw]


def decode(codes) -> str:
    return "".join(ALPHABET[c] for c in np.asarray(codes))


def reverse_complement(codes: np.ndarray) -> np.ndarray:
    return _COMPLEMENT[np.asarray(codes)[::-1]]


def _lines(source: TextIO | str) -> Iterable[str]:
    if isinstance(source, str):
        source = io.StringIO(source)
    return source


@dataclass
class GenomeSequence:
    id: str
    bases: np.ndarray

    @property
    def length(self) -> int:
        return len(self.bases)

    def __len__(self):
        return len(self.bases)


def parse_fasta(source: TextIO | str) -> list[GenomeSequence]:
    """Read every record of a FASTA stream (or string).

    The record id is the first whitespace-delimited token after ``>``.
    Internal whitespace in sequence lines is ignored.
    """
    records = []
    current_id = None
    chunks: list[str] = []
    for lineno, line in enumerate(_lines(source), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            if current_id is not None:
                records.append(GenomeSequence(current_id, encode("".join(chunks))))
            tokens = line[1:].split()
            if not tokens:
                raise IngestError(f"FASTA header without id at line {lineno}")
            current_id = tokens[0]
            chunks = []
            continue
        if current_id is None:
            raise IngestError(f"FASTA sequence data before any header at line {lineno}")
        chunks.append("".join(line.split()))
    if current_id is not None:
        records.append(GenomeSequence(current_id, encode("".join(chunks))))
    if not records:
        raise IngestError("no records")
    return records


def write_fasta(records: Iterable[GenomeSequence], out: TextIO, width: int = 60):
    for rec in records:
        out.write(f">{rec.id}\n")
        text = decode(rec.bases)
        for i in range(0, len(text), width):
            out.write(text[i:i + width] + "\n")


@dataclass(frozen=True)
class ExonRecord:
    sequence_id: str
    start: int
    end: int
    strand: str = "."
    line: int | None = field(default=None, compare=False, hash=False)

    @property
    def key(self) -> str:
        return f"{self.sequence_id}:{self.start}-{self.end}:{self.strand}"


_STRANDS = {"+": "+", "-": "-", ".": ".", "": "."}


def parse_exon_annotation(source: TextIO | str, keep_duplicates: bool = False) -> list[ExonRecord]:
    """Parse ``sequence_id<TAB>start<TAB>end[<TAB>strand]`` lines.

    Coordinates are 0-based half-open. Duplicates are dropped, keeping the
    first occurrence, unless ``keep_duplicates`` is set.
    """
    seen = set()
    records = []
    for lineno, line in enumerate(_lines(source), start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (3, 4):
            raise IngestError(f"expected 3 or 4 tab-separated fields at line {lineno}, got {len(fields)}")
        seq_id = fields[0].strip()
        try:
            start, end = int(fields[1]), int(fields[2])
        except ValueError:
            raise IngestError(f"non-integer coordinate at line {lineno}") from None
        strand = fields[3].strip() if len(fields) == 4 else "."
        if strand not in _STRANDS:
            raise IngestError(f"bad strand {strand!r} at line {lineno}")
        if not seq_id:
            raise IngestError(f"empty sequence id at line {lineno}")
        if start < 0:
            raise IngestError(f"negative start at line {lineno}")
        if start >= end:
            raise IngestError(f"empty exon at line {lineno}")
        rec = ExonRecord(seq_id, start, end, _STRANDS[strand], lineno)
        if rec in seen and not keep_duplicates:
            continue
        seen.add(rec)
        records.append(rec)
    return records


@dataclass(frozen=True)
class LabeledWindow:
    bases: np.ndarray = field(compare=False)
    label: int
    sequence_id: str
    center: int
    group: str = ""

    def __post_init__(self):
        if len(self.bases) % 2 or len(self.bases) == 0:
            raise ValueError(f"window length must be even and positive, got {len(self.bases)}")
        if np.any(np.asarray(self.bases) >= N):
            raise ValueError(f"window {self.provenance} contains N")

    @property
    def provenance(self) -> str:
        return f"{self.sequence_id}:{self.center}"

    @property
    def text(self) -> str:
        return decode(self.bases)


@dataclass
class ExtractionStats:
    produced: Counter = field(default_factory=Counter)
    dropped: Counter = field(default_factory=Counter)
    out_of_range: int = 0
    ambiguous: int = 0

    @property
    def total_produced(self) -> int:
        return sum(self.produced.values())

    @property
    def total_dropped(self) -> int:
        return sum(self.dropped.values())


def boundary_centers(exon: ExonRecord) -> list[tuple[int, int]]:
    """``(label, center)`` pairs for the three windows of an exon.

    On the plus strand the left boundary is the acceptor, the right boundary
    the donor. Minus-strand exons read the other way, so the labels swap.
    """
    mid = exon.start + (exon.end - exon.start) // 2
    if exon.strand == "-":
        return [(DONOR, exon.start), (NONSITE, mid), (ACCEPTOR, exon.end)]
    return [(ACCEPTOR, exon.start), (NONSITE, mid), (DONOR, exon.end)]


def extract_windows(genome: GenomeSequence, exon: ExonRecord, w: int = WINDOW_LENGTH,
                    stats: ExtractionStats | None = None) -> list[LabeledWindow]:
    """Cut the acceptor, non-site and donor windows around one exon.

    Each window covers ``[center - w/2, center + w/2)``. Windows running off
    the sequence or containing N are dropped. Minus-strand windows are
    reverse-complemented.
    """
    if w <= 0 or w % 2:
        raise ValueError(f"window length must be even and positive, got {w}")
    if exon.sequence_id != genome.id:
        raise ValueError(f"exon on {exon.sequence_id!r} given genome {genome.id!r}")
    if exon.end > genome.length:
        where = f" (annotation line {exon.line})" if exon.line else ""
        raise IngestError(f"exon {exon.key} extends past end of {genome.id} (length {genome.length}){where}")
    half = w // 2
    out = []
    for label, center in boundary_centers(exon):
        lo, hi = center - half, center + half
        if lo < 0 or hi > genome.length:
            if stats is not None:
                stats.dropped[label] += 1
                stats.out_of_range += 1
            continue
        bases = genome.bases[lo:hi]
        if np.any(bases == N):
            if stats is not None:
                stats.dropped[label] += 1
                stats.ambiguous += 1
            continue
        if exon.strand == "-":
            bases = reverse_complement(bases)
        else:
            bases = bases.copy()
        out.append(LabeledWindow(bases, label, genome.id, center, exon.key))
        if stats is not None:
            stats.produced[label] += 1
    return out


def encode_onehot(window: LabeledWindow | np.ndarray) -> np.ndarray:
    codes = np.asarray(window.bases if isinstance(window, LabeledWindow) else window)
    if np.any(codes >= N) or np.any(codes < 0):
        raise ValueError("cannot one-hot encode a window containing N")
    return np.eye(4, dtype=np.uint8)[codes]


def sample_exons(exons: list[ExonRecord], k: int | None, seed: int) -> list[ExonRecord]:
    """Uniform sample of ``k`` exons without replacement, in input order."""
    if k is None or k >= len(exons):
        return list(exons)
    if k < 0:
        raise ValueError("sample size must be nonnegative")
    keep = np.sort(make_rng(seed).choice(len(exons), size=k, replace=False))
    return [exons[i] for i in keep]


@dataclass
class DatasetSplit:
    train: list[LabeledWindow]
    test: list[LabeledWindow]
    seed: int


def split_dataset(windows: list[LabeledWindow], test_ratio: float, seed: int) -> DatasetSplit:
    """Seeded train/test split that keeps each exon's windows together.

    Groups are sorted by key before shuffling, so the result does not depend
    on input order. The train side gets ``floor(n_groups * (1 - test_ratio))``
    groups, clamped so both sides are nonempty.
    """
    if not 0 < test_ratio < 1:
        raise ValueError(f"test_ratio must be in (0, 1), got {test_ratio}")
    groups: dict[str, list[LabeledWindow]] = {}
    for win in windows:
        groups.setdefault(win.group or win.provenance, []).append(win)
    if len(groups) < 2:
        raise ValueError(f"need at least 2 exon groups to split, got {len(groups)}")
    keys = sorted(groups)
    order = make_rng(seed).permutation(len(keys))
    n_train = min(max(math.floor(len(keys) * (1 - test_ratio)), 1), len(keys) - 1)
    train_keys = {keys[i] for i in order[:n_train]}
    train = [w for w in windows if (w.group or w.provenance) in train_keys]
    test = [w for w in windows if (w.group or w.provenance) not in train_keys]
    return DatasetSplit(train, test, seed)


def to_binary_label(label: int) -> int:
    return NONSITE if label == NONSITE else SITE


def label_names(num_classes: int) -> tuple[str, ...]:
    if num_classes == 3:
        return LABELS3
    if num_classes == 2:
        return LABELS2
    raise ValueError(f"num_classes must be 2 or 3, got {num_classes}")


# ---------------------------------------------------------------------------
# dataset files: label<TAB>bases<TAB>sequence_id:center
# ---------------------------------------------------------------------------


def write_windows(windows: Iterable[LabeledWindow], out: TextIO, num_classes: int = 3):
    names = label_names(num_classes)
    for win in windows:
        label = win.label if num_classes == 3 else to_binary_label(win.label)
        out.write(f"{names[label]}\t{win.text}\t{win.provenance}\n")


@dataclass
class WindowFile:
    windows: list[LabeledWindow]
    num_classes: int | None  # None when only "nonsite" labels were seen

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return windows_to_arrays(self.windows)


_LABEL_LOOKUP = {
    "acceptor": (ACCEPTOR, 3),
    "donor": (DONOR, 3),
    "site": (SITE, 2),
    "nonsite": (NONSITE, None),
}


def read_windows(source: TextIO | str, w: int | None = None) -> WindowFile:
    """Parse a dataset file. Labels decide the class count (3 or 2).

    Raises :class:`IngestError` listing every malformed line.
    """
    windows = []
    kinds = set()
    errors = []
    for lineno, line in enumerate(_lines(source), start=1):
        line = line.rstrip("\r\n")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            errors.append(f"line {lineno}: expected 3 tab-separated fields")
            continue
        name, text, prov = fields
        if name not in _LABEL_LOOKUP:
            errors.append(f"line {lineno}: unknown label {name!r}")
            continue
        label, k = _LABEL_LOOKUP[name]
        if k is not None:
            kinds.add(k)
        if w is not None and len(text) != w:
            errors.append(f"line {lineno}: window length {len(text)} != {w}")
            continue
        seq_id, _, center = prov.rpartition(":")
        try:
            center = int(center)
        except ValueError:
            errors.append(f"line {lineno}: bad provenance {prov!r}")
            continue
        try:
            windows.append(LabeledWindow(encode(text), label, seq_id, center, prov))
        except ValueError as exc:
            errors.append(f"line {lineno}: {exc}")
    if len(kinds) > 1:
        errors.append("file mixes 3-class (acceptor/donor) and 2-class (site) labels")
    if errors:
        raise IngestError("; ".join(errors))
    return WindowFile(windows, kinds.pop() if kinds else None)


def windows_to_arrays(windows: list[LabeledWindow]) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        return np.zeros((0, 0), dtype=np.int64), np.zeros(0, dtype=np.int64)
    lengths = {len(w.bases) for w in windows}
    if len(lengths) != 1:
        raise ValueError(f"windows of mixed lengths {sorted(lengths)}")
    codes = np.stack([np.asarray(w.bases, dtype=np.int64) for w in windows])
    labels = np.array([w.label for w in windows], dtype=np.int64)
    return codes, labels


def motif_enrichment(windows: Iterable[LabeledWindow], label: int, position: int, motif: str) -> float:
    """Fraction of ``label`` windows carrying ``motif`` at ``position``."""
    target = encode(motif)
    hits = total = 0
    for win in windows:
        if win.label != label:
            continue
        total += 1
        hits += bool(np.array_equal(win.bases[position:position + len(target)], target))
    return hits / total if total else 0.0
