"""BLEU-1..4 with clipped n-gram precision and brevity penalty.

No smoothing: any zero n-gram precision zeroes the corresponding BLEU-n.
Scores are in [0, 1]. Tokens are compared case-sensitively as given.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field


class MetricError(ValueError):
    pass


@dataclass
class BleuReport:
    bleu: dict[int, float]            # n -> BLEU-n
    precisions: dict[int, float]      # n -> clipped precision p_n
    brevity_penalty: float
    candidate_length: int
    reference_length: int
    degenerate: bool = False          # empty candidate somewhere

    def record(self, prefix: str = "") -> str:
        """Single-line key=value form for machine parsing."""
        parts = []
        for n in sorted(self.bleu):
            parts.append(f"{prefix}bleu{n}={self.bleu[n]:.6f}")
        for n in sorted(self.precisions):
            parts.append(f"{prefix}p{n}={self.precisions[n]:.6f}")
        parts.append(f"{prefix}bp={self.brevity_penalty:.6f}")
        parts.append(f"{prefix}c={self.candidate_length}")
        parts.append(f"{prefix}r={self.reference_length}")
        return " ".join(parts)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def ngram_counts(candidate: list[str], references: list[list[str]],
                 n: int) -> tuple[int, int]:
    """(clipped matches, total candidate n-grams)."""
    if n < 1:
        raise MetricError(f"n must be >= 1, got {n}")
    if not references:
        raise MetricError("at least one reference is required")
    cand = _ngrams(candidate, n)
    total = sum(cand.values())
    if total == 0:
        return 0, 0
    max_ref: Counter = Counter()
    for ref in references:
        rc = _ngrams(ref, n)
        for gram, c in rc.items():
            if c > max_ref[gram]:
                max_ref[gram] = c
    clipped = sum(min(c, max_ref[gram]) for gram, c in cand.items())
    return clipped, total


def ngram_clipped_precision(candidate: list[str],
                            references: list[list[str]], n: int) -> float:
    clipped, total = ngram_counts(candidate, references, n)
    return clipped / total if total else 0.0


def closest_ref_length(candidate_len: int,
                       references: list[list[str]]) -> int:
    """Reference length closest to the candidate's; ties pick the shorter."""
    lens = sorted(len(r) for r in references)
    return min(lens, key=lambda rl: (abs(rl - candidate_len), rl))


def brevity_penalty(c: int, r: int) -> float:
    """1 when the candidate is longer than the reference, else e^(1 - r/c).
    An empty candidate is degenerate and scores 0."""
    if c == 0:
        return 0.0
    if c > r:
        return 1.0
    return math.exp(1.0 - r / c)


def _compose(numers: dict[int, int], denoms: dict[int, int],
             c: int, r: int, max_n: int) -> BleuReport:
    precisions = {}
    for n in range(1, max_n + 1):
        precisions[n] = numers[n] / denoms[n] if denoms[n] else 0.0
    bp = brevity_penalty(c, r)
    bleu = {}
    for n in range(1, max_n + 1):
        ps = [precisions[i] for i in range(1, n + 1)]
        if any(p == 0.0 for p in ps):
            bleu[n] = 0.0
        else:
            bleu[n] = bp * math.exp(math.fsum(math.log(p) for p in ps) / n)
    return BleuReport(bleu=bleu, precisions=precisions, brevity_penalty=bp,
                      candidate_length=c, reference_length=r,
                      degenerate=(c == 0))


def sentence_bleu(candidate: list[str], references: list[list[str]],
                  max_n: int = 4) -> BleuReport:
    if not 1 <= max_n <= 4:
        raise MetricError(f"max_n must be in 1..4, got {max_n}")
    if not references:
        raise MetricError("at least one reference is required")
    numers, denoms = {}, {}
    for n in range(1, max_n + 1):
        numers[n], denoms[n] = ngram_counts(candidate, references, n)
    c = len(candidate)
    r = closest_ref_length(c, references)
    return _compose(numers, denoms, c, r, max_n)


def corpus_bleu(pairs: list[tuple[list[str], list[list[str]]]],
                max_n: int = 4) -> BleuReport:
    """Accumulate clipped counts and lengths over all pairs before taking
    ratios; reduces to sentence_bleu on a single pair."""
    if not pairs:
        raise MetricError("corpus_bleu requires at least one pair")
    numers = {n: 0 for n in range(1, max_n + 1)}
    denoms = {n: 0 for n in range(1, max_n + 1)}
    c_total = r_total = 0
    for candidate, references in pairs:
        if not references:
            raise MetricError("every pair needs at least one reference")
        for n in range(1, max_n + 1):
            num, den = ngram_counts(candidate, references, n)
            numers[n] += num
            denoms[n] += den
        c_total += len(candidate)
        r_total += closest_ref_length(len(candidate), references)
    return _compose(numers, denoms, c_total, r_total, max_n)
