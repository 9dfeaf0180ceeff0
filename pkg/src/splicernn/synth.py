"""Planted-motif synthetic windows for desk-scale training checks.

Donor windows carry ``GT`` at ``[w/2, w/2+1]`` (just past the boundary),
acceptor windows ``AG`` at ``[w/2-2, w/2-1]`` (just before it). All other
positions are uniform random. Non-site windows are uniform random in the
default ``"random"`` mode, so they hit either motif at the background rate of
1/16 each. ``"exclusive"`` mode resamples the unplanted bases of every window
until no motif other than its own class's is present in either slot, which
makes the task separable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import ACCEPTOR, DONOR, NONSITE, LabeledWindow, encode
from .numerics import make_rng


@dataclass(frozen=True)
class MotifConfig:
    donor: str = "GT"
    acceptor: str = "AG"
    nonsite_mode: str = "random"

    def __post_init__(self):
        if self.nonsite_mode not in ("random", "exclusive"):
            raise ValueError(f"nonsite_mode must be 'random' or 'exclusive', got {self.nonsite_mode!r}")
        for motif in (self.donor, self.acceptor):
            if not motif or set(motif.upper()) - set("ACGT"):
                raise ValueError(f"motif must be a nonempty ACGT string, got {motif!r}")


def motif_positions(w: int, motifs: MotifConfig) -> tuple[int, int]:
    """Start offsets of the acceptor and donor motifs in a window of length ``w``."""
    return w // 2 - len(motifs.acceptor), w // 2


def _has(bases: np.ndarray, start: int, motif: np.ndarray) -> bool:
    return bool(np.array_equal(bases[start:start + len(motif)], motif))


def _collides(bases, label, acc_at, acc, don_at, don) -> bool:
    stray_acc = label != ACCEPTOR and _has(bases, acc_at, acc)
    stray_don = label != DONOR and _has(bases, don_at, don)
    return stray_acc or stray_don


def generate(n_per_class: int, w: int, seed: int, motifs: MotifConfig = MotifConfig()) -> list[LabeledWindow]:
    """``3 * n_per_class`` windows, interleaved acceptor/nonsite/donor."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if w < 4 or w % 2:
        raise ValueError(f"w must be even and >= 4, got {w}")
    acc_at, don_at = motif_positions(w, motifs)
    if acc_at < 0 or don_at + len(motifs.donor) > w:
        raise ValueError(f"motifs do not fit in a window of length {w}")
    acc = encode(motifs.acceptor.upper())
    don = encode(motifs.donor.upper())
    rng = make_rng(seed)
    out = []
    for i in range(n_per_class):
        for label in (ACCEPTOR, NONSITE, DONOR):
            bases = rng.integers(0, 4, size=w).astype(np.uint8)
            while True:
                if label == ACCEPTOR:
                    bases[acc_at:acc_at + len(acc)] = acc
                elif label == DONOR:
                    bases[don_at:don_at + len(don)] = don
                if motifs.nonsite_mode == "random" or not _collides(bases, label, acc_at, acc, don_at, don):
                    break
                bases = rng.integers(0, 4, size=w).astype(np.uint8)
            index = len(out)
            out.append(LabeledWindow(bases, label, "synth", index, f"synth:{index}"))
    return out


def bayes_accuracy(motifs: MotifConfig = MotifConfig()) -> float:
    """Best achievable accuracy on balanced data, by enumerating motif patterns.

    Only the two motif slots carry information, so the optimal classifier
    sees one of four patterns (acceptor motif present or not, donor motif
    present or not) and picks the most likely class for each. In random mode
    this is 721/768 for the default dimers; exclusive mode is separable.
    """
    pa = 4.0 ** -len(motifs.acceptor)
    pd = 4.0 ** -len(motifs.donor)
    exclusive = motifs.nonsite_mode == "exclusive"
    correct = 0.0
    for has_a in (True, False):
        for has_d in (True, False):
            # probability of this pattern given each class
            chance_a = (0.0 if has_a else 1.0) if exclusive else (pa if has_a else 1 - pa)
            chance_d = (0.0 if has_d else 1.0) if exclusive else (pd if has_d else 1 - pd)
            lik = {
                ACCEPTOR: (1.0 if has_a else 0.0) * chance_d,
                NONSITE: chance_a * chance_d,
                DONOR: chance_a * (1.0 if has_d else 0.0),
            }
            correct += max(lik.values()) / 3.0
    return correct
