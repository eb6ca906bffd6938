#!/usr/bin/env python3
"""Regenerate the bundled toy benchmark (50 docs, 10 topics, graded qrels,
stub thesaurus).

Each topic pairs two query words with a six-word synonym cluster. The
relevant documents are written in the synonym vocabulary (vocabulary
mismatch by construction), so raw keyword retrieval mostly finds the
grade-0 distractor that repeats the literal query words. That distractor
also carries a "poison" word whose thesaurus entries point at junk terms
found only in another grade-0 document, which is what separates pseudo
feedback from oracle feedback.
"""

import json
from pathlib import Path

TOPICS = [
    # (query_a, query_b, synonyms_a, synonyms_b, poison, junk)
    ("goldfish", "growth", ["carp", "fishbowl", "finned"],
     ["maturity", "lengthen", "fullsize"], "myth",
     ["tabloid", "clickbait", "hearsay"]),
    ("espresso", "brewing", ["coffee", "crema", "rossa"],
     ["extraction", "grind", "tamping"], "hoax",
     ["gimmick", "swindle", "knockoff"]),
    ("telescope", "targets", ["stargazing", "eyepiece", "refractor"],
     ["nebula", "cluster", "galaxies"], "gossip",
     ["horoscope", "astrology", "numerology"]),
    ("sourdough", "rising", ["levain", "loaf", "crumb"],
     ["ferment", "proofing", "hydration"], "scandal",
     ["chainletter", "pyramid", "ponzi"]),
    ("marathon", "fueling", ["roadrace", "runners", "kilometers"],
     ["gels", "carbs", "electrolytes"], "conspiracy",
     ["bigfoot", "yeti", "sasquatch"]),
    ("beehive", "wintering", ["apiary", "honeybee", "broodbox"],
     ["insulation", "candyboard", "stores"], "fraud",
     ["unicorn", "mermaid", "griffin"]),
    ("origami", "tessellation", ["paperfold", "crane", "crease"],
     ["pleat", "gridfold", "mosaic"], "parody",
     ["lottery", "jackpot", "scratchcard"]),
    ("volcano", "monitoring", ["lava", "magma", "caldera"],
     ["seismometer", "tremor", "deformation"], "spoof",
     ["telegraphy", "faxmachine", "pager"]),
    ("chess", "endgames", ["grandmaster", "zugzwang", "castling"],
     ["rook", "promotion", "stalemate"], "satire",
     ["soapopera", "sitcom", "gameshow"]),
    ("tidepool", "dwellers", ["intertidal", "rockpool", "shoreline"],
     ["anemone", "starfish", "urchin"], "prank",
     ["karaoke", "disco", "polka"]),
]

FILLER = ["notes", "guide", "overview", "intro", "summary",
          "page", "article", "review", "basics", "handbook"]


def main() -> None:
    out = Path(__file__).resolve().parents[1] / "src" / "genqr" / "data" / "toy"
    out.mkdir(parents=True, exist_ok=True)

    docs, topics, qrels, thesaurus = [], [], [], {}
    for t, (qa, qb, syn_a, syn_b, poison, junk) in enumerate(TOPICS, start=1):
        qid = str(t)
        topics.append((qid, f"{qa} {qb}"))
        cluster = syn_a + syn_b
        a1, a2, a3 = syn_a
        b1, b2, b3 = syn_b
        j1, j2, j3 = junk
        f = [FILLER[(t + i) % len(FILLER)] for i in range(5)]

        graded = [
            (f"d{t:02d}1", 3, f"{a1} {a2} {a3} {b1} {b2} {b3} {a1} {b1} {f[0]} {f[1]}"),
            (f"d{t:02d}2", 2, f"{qa} {a2} {b2} {a3} {f[2]} {f[3]}"),
            (f"d{t:02d}3", 1, f"{a1} {b3} {f[4]} {f[0]} {f[1]}"),
            (f"d{t:02d}4", 0, f"{qa} {qb} {poison} {qa} {qb} {f[2]} {f[3]}"),
            (f"d{t:02d}5", 0, f"{j1} {j2} {j3} {j1} {f[4]} {f[0]}"),
        ]
        for docno, grade, text in graded:
            docs.append({"docno": docno, "text": text})
            qrels.append(f"{qid} 0 {docno} {grade}")

        thesaurus[qa] = list(syn_a)
        thesaurus[qb] = list(syn_b)
        for word in cluster:
            thesaurus[word] = [w for w in cluster if w != word]
        thesaurus[poison] = list(junk)

    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")
    with open(out / "topics.tsv", "w", encoding="utf-8") as fh:
        for qid, query in topics:
            fh.write(f"{qid}\t{query}\n")
    with open(out / "qrels.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(qrels) + "\n")
    with open(out / "thesaurus.json", "w", encoding="utf-8") as fh:
        json.dump(thesaurus, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(docs)} docs, {len(topics)} topics under {out}")


if __name__ == "__main__":
    main()
