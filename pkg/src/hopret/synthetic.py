"""Desk-scale synthetic two-hop retrieval task.

The corpus states one fact per (entity, relation) pair, phrased
"<target> is the <rel> of <source>" and titled with the target entity
(every text has identical token length, so layer-normalized encodings are
scale-comparable).  A question "what is <ra> of the <rb> of <src>" has
exactly one gold chain: the <rb>-fact of <src>, then the bridge entity's
<ra>-fact, which contains the answer.  ``meta["links"]`` points each fact
at its target entity's facts, mirroring a hyperlinked corpus.

The generator guarantees the answer token occurs only in the second gold
passage, so the passage-ordering heuristic recovers the generated order.
Hard negatives are mined for both hops: TF-IDF confusables of the bare
question (wrong-relation facts about the source) and of the reformulated
hop-2 query (facts that merely mention the bridge).
"""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, Passage
from .trainer import TrainingExample, mine_hard_negatives

_QUESTIONS_PER_ENTITY = 20
_HARD_PER_QUESTION = 2
_HARD_PER_HOP2 = 2
_HARD_CAP = 5  # per example; keeps batch matrices desk-sized


def _fact_id(entity: int, relation: int) -> str:
    return f"fact-{entity}-{relation}"


def _question(relations: list[str], entities: list[str], src: int, rb: int, ra: int) -> str:
    return f"what is {relations[ra]} of the {relations[rb]} of {entities[src]}"


def generate_synthetic_task(
    num_entities: int,
    num_relations: int,
    seed: int,
) -> tuple[Corpus, list[TrainingExample], list[TrainingExample]]:
    """Build (corpus, train set, dev set); same arguments give identical data.

    Raises ValueError when no two-hop chain with a distinct answer entity is
    possible (e.g. 2 entities / 1 relation forces the answer back onto the
    source).
    """
    if num_entities < 2 or num_relations < 1:
        raise ValueError(
            f"need at least 2 entities and 1 relation, got {num_entities}/{num_relations}"
        )
    rng = np.random.default_rng(np.random.SeedSequence((seed, num_entities, num_relations)))
    # Zero-padded names so no entity/relation token is a substring of another
    # (the ordering heuristic and answer recall match by substring).
    e_width = len(str(num_entities - 1))
    r_width = len(str(num_relations - 1))
    entities = [f"ent{i:0{e_width}d}" for i in range(num_entities)]
    relations = [f"rel{j:0{r_width}d}" for j in range(num_relations)]

    # One fact per (source, relation): target drawn uniformly among the others.
    target: dict[tuple[int, int], int] = {}
    for e in range(num_entities):
        for r in range(num_relations):
            t = int(rng.integers(num_entities - 1))
            if t >= e:
                t += 1
            target[(e, r)] = t

    passages: list[Passage] = []
    for e in range(num_entities):
        for r in range(num_relations):
            t = target[(e, r)]
            passages.append(
                Passage(
                    id=_fact_id(e, r),
                    title=entities[t],
                    text=f"{entities[t]} is the {relations[r]} of {entities[e]}",
                    meta={"links": ",".join(_fact_id(t, r2) for r2 in range(num_relations))},
                )
            )
    corpus = Corpus(passages)

    # Valid questions: bridge and answer distinct from the source, answer
    # distinct from the bridge, so the answer token appears only in the
    # second gold passage.  Grouped by bridge entity so the sampled budget
    # covers every entity's bridge role as evenly as possible.
    by_bridge: dict[int, list[tuple[int, int, int]]] = {}
    for src in range(num_entities):
        for rb in range(num_relations):
            bridge = target[(src, rb)]
            for ra in range(num_relations):
                answer = target[(bridge, ra)]
                if answer != src and answer != bridge:
                    by_bridge.setdefault(bridge, []).append((src, rb, ra))
    if not by_bridge:
        raise ValueError(
            f"no two-hop chains possible with {num_entities} entities "
            f"and {num_relations} relations"
        )
    for triples in by_bridge.values():
        rng.shuffle(triples)
    budget = min(sum(len(v) for v in by_bridge.values()), _QUESTIONS_PER_ENTITY * num_entities)
    chosen: list[tuple[int, int, int]] = []
    round_idx = 0
    while len(chosen) < budget:
        advanced = False
        for bridge in sorted(by_bridge):
            triples = by_bridge[bridge]
            if round_idx < len(triples) and len(chosen) < budget:
                chosen.append(triples[round_idx])
                advanced = True
        if not advanced:
            break
        round_idx += 1

    examples: list[TrainingExample] = []
    for src, rb, ra in chosen:
        bridge = target[(src, rb)]
        answer = target[(bridge, ra)]
        question = _question(relations, entities, src, rb, ra)
        first = corpus.lookup(corpus.handle_of(_fact_id(src, rb)))
        second = corpus.lookup(corpus.handle_of(_fact_id(bridge, ra)))
        skeleton = TrainingExample(
            question=question,
            answer=entities[answer],
            positives=(first, second),
            qtype="bridge",
        )
        hard = list(mine_hard_negatives(corpus, skeleton, _HARD_PER_QUESTION))[: _HARD_CAP - _HARD_PER_HOP2]
        seen = {p.id for p in skeleton.positives} | {p.id for p in hard}
        hop2_query = f"{question} {first.title} {first.text}"
        for handle, _ in corpus.tfidf_scores(hop2_query, _HARD_CAP + 2):
            candidate = corpus.lookup(handle)
            if candidate.id not in seen:
                hard.append(candidate)
                seen.add(candidate.id)
            if len(hard) >= _HARD_CAP:
                break
        examples.append(
            TrainingExample(
                question=skeleton.question,
                answer=skeleton.answer,
                positives=skeleton.positives,
                hard_negatives=tuple(hard),
                qtype=skeleton.qtype,
            )
        )

    order = rng.permutation(len(examples))
    examples = [examples[int(i)] for i in order]
    n_dev = max(1, len(examples) // 10)
    dev = examples[:n_dev]
    train = examples[n_dev:]
    if not train:
        raise ValueError("too few questions to form a train/dev split")
    return corpus, train, dev
