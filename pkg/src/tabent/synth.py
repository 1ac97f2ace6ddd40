"""Synthetic table corpora where relevance hinges on entity pairs.

Every table is about one (person, date) pair; queries name a pair and are
relevant to exactly the one table carrying both. Other tables reuse the
same person with other dates or the same date with other persons, and
queries carry topic words drawn independently of the gold table's topic,
so surface word overlap is a misleading signal while the entity pair is
decisive. Person names feed a gazetteer; years match the built-in date
rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Qrels, Query, Table

_FIRST_NAMES = (
    "mira", "torben", "salome", "edric", "yusra", "kanta", "olena", "petra",
    "ravel", "sable", "tomas", "ulric", "vanya", "wilmet", "xenia", "yorick",
    "zelda", "abner", "brisa", "cedric", "dalia", "efren", "fay", "gruna",
    "haldis", "imre", "jorun", "kelda", "lyall", "merit", "nerys", "odran",
)

_LAST_NAMES = (
    "ashford", "balmont", "corvel", "draymoor", "ellerby", "fenwick",
    "garrow", "halvane", "ibsen", "jarrell", "kestwick", "lorring",
    "marbury", "nolcott", "ostrane", "pellham", "quarsten", "ridgeway",
    "selwick", "thorveld", "umbria", "varnell", "wexcombe", "yardley",
    "zollern", "arbogast", "bellware", "crowhurst", "dunmore", "eastvale",
    "farrindon", "gostwyck",
)

_TOPICS = {
    "regatta": ("regatta", "sailing", "harbor", "crew", "trophy"),
    "chess": ("chess", "tournament", "grandmaster", "opening", "board"),
    "orchard": ("orchard", "harvest", "apple", "grove", "yield"),
    "observatory": ("observatory", "telescope", "comet", "survey", "night"),
    "railway": ("railway", "locomotive", "station", "track", "timetable"),
    "pottery": ("pottery", "kiln", "glaze", "ceramic", "workshop"),
    "marathon": ("marathon", "runner", "distance", "finish", "pace"),
    "library": ("library", "archive", "manuscript", "catalog", "shelf"),
    "apiary": ("apiary", "beekeeper", "hive", "honey", "swarm"),
    "foundry": ("foundry", "casting", "furnace", "alloy", "mold"),
    "theatre": ("theatre", "premiere", "stage", "playwright", "curtain"),
    "glacier": ("glacier", "expedition", "summit", "icefall", "basecamp"),
}

_FILLER = ("annual", "event", "record", "entry", "season", "noted", "listed", "held")

_QUERY_TEMPLATES = (
    "which {topic} {topic2} featured {person} in {year}",
    "what {topic} did {person} join during {year} {topic2}",
    "find the {topic} {topic2} entry for {person} from {year}",
    "{person} {year} {topic} {topic2} details",
)


@dataclass(frozen=True)
class SynthConfig:
    n_persons: int = 24
    n_dates: int = 24
    n_tables: int = 240
    n_train_queries: int = 120
    n_eval_queries: int = 100
    seed: int = 7
    first_year: int = 1901


@dataclass
class SynthCorpus:
    tables: list[Table]
    train_queries: list[Query]
    train_qrels: Qrels
    eval_queries: list[Query]
    eval_qrels: Qrels
    gazetteer: dict[str, str]


def generate(cfg: SynthConfig = SynthConfig()) -> SynthCorpus:
    """Build a corpus; train and eval queries target disjoint entity pairs."""
    if cfg.n_persons > len(_FIRST_NAMES) * len(_LAST_NAMES):
        raise ValueError("not enough distinct names")
    if cfg.n_tables > cfg.n_persons * cfg.n_dates:
        raise ValueError("n_tables exceeds the (person, date) grid")
    if cfg.n_train_queries + cfg.n_eval_queries > cfg.n_tables:
        raise ValueError("more queries than distinct pairs")

    rng = np.random.default_rng(cfg.seed)
    persons = []
    seen = set()
    while len(persons) < cfg.n_persons:
        name = f"{_FIRST_NAMES[rng.integers(len(_FIRST_NAMES))]} " \
               f"{_LAST_NAMES[rng.integers(len(_LAST_NAMES))]}"
        if name not in seen:
            seen.add(name)
            persons.append(name)
    dates = [str(cfg.first_year + i) for i in range(cfg.n_dates)]
    topic_names = sorted(_TOPICS)

    grid = [(p, d) for p in range(cfg.n_persons) for d in range(cfg.n_dates)]
    pair_order = rng.permutation(len(grid))
    pairs = [grid[i] for i in pair_order[:cfg.n_tables]]

    tables: list[Table] = []
    for idx, (pi, di) in enumerate(pairs):
        topic = topic_names[int(rng.integers(len(topic_names)))]
        words = _TOPICS[topic]
        title = f"{words[0]} {words[1]} {_FILLER[int(rng.integers(len(_FILLER)))]}s"
        header = ("name", "year", "event", "notes")
        rows = [
            (persons[pi], dates[di], words[2], _FILLER[int(rng.integers(len(_FILLER)))]),
            (words[3], _FILLER[int(rng.integers(len(_FILLER)))], words[4],
             str(int(rng.integers(2, 99)))),
        ]
        tables.append(Table(f"t{idx:04d}", title, header, tuple(rows)))

    def make_queries(tag: str, pair_slice: range) -> tuple[list[Query], Qrels]:
        queries: list[Query] = []
        entries: list[tuple[str, str, int]] = []
        for n, table_idx in enumerate(pair_slice):
            pi, di = pairs[table_idx]
            topic = topic_names[int(rng.integers(len(topic_names)))]
            words = _TOPICS[topic]
            template = _QUERY_TEMPLATES[int(rng.integers(len(_QUERY_TEMPLATES)))]
            text = template.format(
                person=persons[pi], year=dates[di], topic=words[0], topic2=words[1])
            qid = f"{tag}{n:04d}"
            queries.append(Query(qid, text))
            entries.append((qid, f"t{table_idx:04d}", 1))
        return queries, Qrels(entries)

    train_q, train_r = make_queries("qtr", range(cfg.n_train_queries))
    eval_q, eval_r = make_queries(
        "qev", range(cfg.n_train_queries, cfg.n_train_queries + cfg.n_eval_queries))
    gazetteer = {name: "PERSON" for name in persons}
    return SynthCorpus(tables, train_q, train_r, eval_q, eval_r, gazetteer)
