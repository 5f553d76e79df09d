"""Synthetic templated corpora for tests, demos and trend experiments.

A small typed entity world (persons, films, cities) with three
relations. Facts are drawn per sample rather than from a globally
consistent world, so the response tail entity can only be read off the
knowledge set, not memorized from the context alone.
"""

from dataclasses import dataclass

from .corpus import KGDSample, KnowledgeTriple, Utterance
from .rng import stream

_SYLLABLES = ["ba", "re", "mi", "to", "ku", "za", "ni", "vo", "sel", "dar",
              "fen", "gol", "hir", "jun", "lom", "pex"]

RELATIONS = {
    "directed": ("PERSON", "FILM"),
    "visited": ("PERSON", "CITY"),
    "filmed_in": ("FILM", "CITY"),
}

QUESTION_TEMPLATES = {
    "directed": "do you know what {x} directed ?",
    "visited": "can you say where {x} visited ?",
    "filmed_in": "do you know where {x} was filmed_in ?",
}

SMALL_TALK = [
    "hello there my friend",
    "hi nice to chat again",
    "good evening to you",
]

MENTION_TEMPLATES = [
    "i was reading about {x} this morning",
    "someone told me about {x} earlier today",
    "{x} came up in the news again",
]

SYNONYMS = {
    "hello": ["hey", "greetings"],
    "hi": ["hey", "hello"],
    "nice": ["great", "lovely"],
    "good": ["fine", "pleasant"],
    "friend": ["pal", "buddy"],
    "know": ["recall", "remember"],
    "say": ["tell", "state"],
    "can": ["could"],
    "chat": ["talk"],
    "evening": ["night"],
    "reading": ["hearing", "learning"],
    "morning": ["afternoon"],
    "earlier": ["before"],
    "told": ["informed"],
    "news": ["papers", "headlines"],
    "came": ["turned", "popped"],
}


def _names(prefix: str, count: int) -> list[str]:
    names = []
    i = 0
    while len(names) < count:
        a = _SYLLABLES[i % len(_SYLLABLES)]
        b = _SYLLABLES[(i // len(_SYLLABLES)) % len(_SYLLABLES)]
        c = i // (len(_SYLLABLES) ** 2)
        name = (prefix + a + b + (str(c) if c else "")).capitalize()
        names.append(name)
        i += 1
    return names


@dataclass
class World:
    persons: list[str]
    films: list[str]
    cities: list[str]

    @property
    def type_map(self) -> dict:
        out = {p: "PERSON" for p in self.persons}
        out.update({f: "FILM" for f in self.films})
        out.update({c: "CITY" for c in self.cities})
        return out

    def pool(self, etype: str) -> list[str]:
        return {"PERSON": self.persons, "FILM": self.films, "CITY": self.cities}[etype]


def make_world(n_persons: int = 80, n_films: int = 60, n_cities: int = 60) -> World:
    return World(
        persons=_names("", n_persons),
        films=_names("film", n_films),
        cities=_names("city", n_cities),
    )


def world_triples(world: World, seed: int = 0) -> list[KnowledgeTriple]:
    """A background fact list covering every entity at least once."""
    rng = stream(seed, "world-triples")
    triples = []
    for person in world.persons:
        triples.append(KnowledgeTriple(person, "directed", rng.choice(world.films)))
        triples.append(KnowledgeTriple(person, "visited", rng.choice(world.cities)))
    for film in world.films:
        triples.append(KnowledgeTriple(film, "filmed_in", rng.choice(world.cities)))
    # every city appears at least once so the embedding tables cover the world
    for city in world.cities:
        triples.append(KnowledgeTriple(rng.choice(world.persons), "visited", city))
    return triples


def make_sample(world: World, sample_id: str, seed: int,
                n_distractors: int = 4, n_subjects: int | None = None,
                n_tails: int | None = None,
                confusable: bool = False,
                mention_tail: bool = False) -> KGDSample:
    """``n_subjects`` / ``n_tails`` cap how many entities per type appear
    as question subjects / fact tails; repeated subjects with per-sample
    random tails make the response unpredictable from the context alone,
    while a bounded tail pool keeps every tail entity seen often enough
    for tail-copying to generalize. ``confusable`` distractors share the
    target's relation and pools, so the right fact can only be picked out
    by matching the question subject against the triple heads.
    ``mention_tail`` adds a context turn naming the tail entity, so the
    answer is recoverable from either the context or the knowledge set
    (redundant grounding)."""
    rng = stream(seed, "sample", sample_id)
    relation = rng.choice(sorted(RELATIONS))
    head_type, tail_type = RELATIONS[relation]
    head_pool = world.pool(head_type)
    if n_subjects is not None:
        head_pool = head_pool[:n_subjects]
    head = rng.choice(head_pool)
    tail_pool = world.pool(tail_type)
    if n_tails is not None:
        tail_pool = tail_pool[:n_tails]
    tail = rng.choice(tail_pool)
    target = KnowledgeTriple(head, relation, tail)

    knowledge = [target]
    for _ in range(n_distractors):
        if confusable:
            other = rng.choice([h for h in world.pool(head_type) if h != head])
            knowledge.append(KnowledgeTriple(other, relation, rng.choice(tail_pool)))
        else:
            rel = rng.choice(sorted(RELATIONS))
            h_t, t_t = RELATIONS[rel]
            knowledge.append(
                KnowledgeTriple(rng.choice(world.pool(h_t)), rel,
                                rng.choice(world.pool(t_t)))
            )
    rng.shuffle(knowledge)

    context = []
    if rng.random() < 0.5:
        context.append(Utterance.make("B", rng.choice(SMALL_TALK)))
    if mention_tail:
        context.append(
            Utterance.make("B", rng.choice(MENTION_TEMPLATES).format(x=tail))
        )
    context.append(Utterance.make("A", QUESTION_TEMPLATES[relation].format(x=head)))
    response = Utterance.make("B", f"{head} {relation} {tail} .")
    return KGDSample(sample_id, tuple(context), tuple(knowledge), response)


def make_corpus(n_samples: int, seed: int = 0, world: World | None = None,
                n_distractors: int = 4, n_subjects: int | None = None,
                n_tails: int | None = None,
                confusable: bool = False,
                mention_tail: bool = False) -> tuple[list[KGDSample], World]:
    world = world or make_world()
    samples = [
        make_sample(world, f"syn{seed:03d}-{i:04d}", seed, n_distractors,
                    n_subjects, n_tails, confusable, mention_tail)
        for i in range(n_samples)
    ]
    return samples, world
