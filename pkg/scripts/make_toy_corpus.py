"""Write the bundled toy corpus: 20 short synthetic party manifestos.

Each party has a latent economic position in [-1, 1]. Words are drawn from
a left-leaning, a right-leaning and a neutral vocabulary with probabilities
that shift with the position, then strung into sentences.

    python3 scripts/make_toy_corpus.py [--out src/wordkrill/data/toy_corpus]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

LEFT = (
    "welfare workers unions solidarity equality public housing healthcare wages "
    "pension redistribution childcare tenants nationalise minimum social "
    "investment schools fairness poverty"
).split()
RIGHT = (
    "taxes enterprise markets growth deregulation business competition property "
    "ownership private entrepreneurs budget deficit efficiency incentives "
    "savings trade freedom security"
).split()
NEUTRAL = (
    "the our we will and for people country future a to of in party "
    "government citizens plan support new"
).split()

N_PARTIES = 20
WORDS_PER_DOC = (180, 320)
SEED = 20240611


def manifesto(position: float, n_words: int, rng: np.random.Generator) -> str:
    weights = np.concatenate([
        np.exp(-1.2 * position) * np.ones(len(LEFT)),
        np.exp(1.2 * position) * np.ones(len(RIGHT)),
        2.5 * np.ones(len(NEUTRAL)),
    ])
    vocab = LEFT + RIGHT + NEUTRAL
    words = rng.choice(vocab, size=n_words, p=weights / weights.sum())
    sentences, start = [], 0
    while start < n_words:
        stop = min(n_words, start + int(rng.integers(8, 16)))
        chunk = " ".join(words[start:stop])
        sentences.append(chunk[0].upper() + chunk[1:] + ".")
        start = stop
    return " ".join(sentences) + "\n"


def main(argv=None) -> None:
    default_out = Path(__file__).resolve().parents[1] / "src" / "wordkrill" / "data" / "toy_corpus"
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=default_out)
    ap.add_argument("--seed", type=int, default=SEED)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    positions = np.linspace(-1.0, 1.0, N_PARTIES)
    rng.shuffle(positions)
    args.out.mkdir(parents=True, exist_ok=True)
    for i, pos in enumerate(positions):
        n_words = int(rng.integers(*WORDS_PER_DOC))
        (args.out / f"party{i + 1:02d}.txt").write_text(manifesto(pos, n_words, rng), encoding="utf-8")
    with open(args.out / "positions.tsv", "w", encoding="utf-8") as fh:
        fh.write("doc_id\tposition\n")
        for i, pos in enumerate(positions):
            fh.write(f"party{i + 1:02d}\t{pos:.6f}\n")
    print(f"wrote {N_PARTIES} documents to {args.out}")


if __name__ == "__main__":
    main()
