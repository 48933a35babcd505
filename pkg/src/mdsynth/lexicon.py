"""Small shipped polarity lexicon for the deterministic builtin sentiment measurer.

Custom lexicons load from a text file with one entry per line: ``+word`` for
positive, ``-word`` for negative. Blank lines and ``#`` comments are skipped.
"""

from __future__ import annotations

from pathlib import Path

from .errors import DomainError

POSITIVE_WORDS = frozenset(
    """
    good great excellent superb wonderful brilliant amazing delightful
    masterful charming fresh funny moving powerful sharp smart stunning
    beautiful engaging compelling gripping thrilling hilarious witty
    inventive inspired elegant satisfying rewarding touching memorable
    remarkable outstanding terrific fantastic marvelous captivating
    impressive enjoyable entertaining strong solid crisp lively vibrant
    best better favorite love loved loves triumph masterpiece gem
    """.split()
)

NEGATIVE_WORDS = frozenset(
    """
    bad awful terrible dull boring bland crass crude stale obvious
    inconsistent aimless weak poor tedious mess messy disappointing
    disappointment lifeless flat clumsy shallow hollow forgettable
    predictable derivative contrived lazy sloppy incoherent confusing
    pointless worst worse hate hated hates failure flop disaster
    irritating annoying grating tiresome clunky wooden uninspired
    embarrassing embarrassingly ugly painful unfunny
    """.split()
)


def load_lexicon(path: str | Path) -> tuple[frozenset[str], frozenset[str]]:
    """Read a ``+word`` / ``-word`` lexicon file."""
    positive: set[str] = set()
    negative: set[str] = set()
    for line_number, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("+"):
            positive.add(line[1:].strip().lower())
        elif line.startswith("-"):
            negative.add(line[1:].strip().lower())
        else:
            raise DomainError(f"lexicon line {line_number}: expected '+word' or '-word', got {raw!r}")
    return frozenset(positive), frozenset(negative)
