"""Model-augmented dataset construction.

Best-of-N candidate sampling from a teacher endpoint, execution filtering
against the gold answer, judge-based ranking of the survivors, and export
of the retained samples in SFT shape.  Every exported program is executed
one more time at export; a single mismatch aborts the export.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from statistics import median
from typing import Sequence

from .endpoints import ChatClient, ChatEndpoint
from .executor import (
    CanonicalAnswer,
    ExecStatus,
    ExecutionLimits,
    ExecutionResult,
    ExecutorBackend,
    MiniInterpreterBackend,
    answers_match,
    execute,
    normalize_answer,
    try_normalize_answer,
)
from .orchestrator import Query
from .prompts import chat_messages, parse_judge_score, render_template, split_tagged_triple
from .schema import FormalModel, parse_model, serialize

FALLBACK_SCORE = 5.0  # rubric midpoint, used when no judgment parses at all


@dataclass
class CandidateTriple:
    think: str
    model_doc: str
    code: str
    index: int
    exec_result: ExecutionResult | None = None
    rank_score: float | None = None


@dataclass(frozen=True)
class DatasetSample:
    q: str
    a: str
    s: str
    m: str  # canonical model document
    p: str

    def __post_init__(self) -> None:
        if not isinstance(parse_model(self.m), FormalModel):
            raise ValueError("sample model document must parse cleanly")


class VerificationFailed(Exception):
    def __init__(self, sample_index: int, detail: str):
        super().__init__(f"sample {sample_index} failed re-verification: {detail}")
        self.sample_index = sample_index


def sample_candidates(query: Query, teacher: ChatEndpoint, client: ChatClient,
                      n: int) -> list[CandidateTriple]:
    """Draw n tagged completions and split each into a candidate triple.

    Completions that cannot be split keep whatever sections were found;
    an empty code section makes the candidate fail the execution filter.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if query.gold_answer is None:
        raise ValueError("dataset sampling requires a gold answer")
    prompt = render_template("teacher_v1", question=query.question,
                             instruction=query.instruction)
    completions = client.complete(teacher, chat_messages(prompt), n)
    triples = []
    for i, completion in enumerate(completions):
        think, model_doc, code = split_tagged_triple(completion)
        triples.append(CandidateTriple(think=think, model_doc=model_doc,
                                       code=code, index=i))
    return triples


def execution_matches(code: str, gold: CanonicalAnswer,
                      limits: ExecutionLimits,
                      backend: ExecutorBackend) -> tuple[ExecutionResult, bool]:
    result = execute(code, limits, backend)
    if result.status is not ExecStatus.OK or result.answer is None:
        return result, False
    candidate = try_normalize_answer(result.answer, gold.kind)
    return result, candidate is not None and answers_match(candidate, gold)


def filter_by_execution(candidates: Sequence[CandidateTriple], gold: CanonicalAnswer,
                        limits: ExecutionLimits = ExecutionLimits(),
                        backend: ExecutorBackend | None = None) -> list[CandidateTriple]:
    """Keep exactly the candidates whose program reproduces the gold answer.

    Every input candidate gets its exec_result attached, retained or not.
    """
    backend = backend or MiniInterpreterBackend()
    valid = []
    for candidate in candidates:
        result, matches = execution_matches(candidate.code, gold, limits, backend)
        candidate.exec_result = result
        if matches:
            valid.append(candidate)
    return valid


def rank_by_self_evaluation(valid: Sequence[CandidateTriple], judge: ChatEndpoint,
                            client: ChatClient, k: int, query: Query) -> list[CandidateTriple]:
    """Score survivors independently with the judge rubric; keep top min(K, I).

    Unparseable judgments fall back to the median of the parsed scores.
    Ties break by shorter code, then lower candidate index.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if not valid or k == 0:
        return []
    raw_scores: list[int | None] = []
    for candidate in valid:
        prompt = render_template("judge_v1", question=query.question,
                                 think=candidate.think,
                                 model_document=candidate.model_doc,
                                 code=candidate.code)
        completion = client.complete(judge, chat_messages(prompt), 1)[0]
        raw_scores.append(parse_judge_score(completion))
    parsed = [s for s in raw_scores if s is not None]
    fallback = float(median(parsed)) if parsed else FALLBACK_SCORE
    for candidate, score in zip(valid, raw_scores):
        candidate.rank_score = float(score) if score is not None else fallback
    ordered = sorted(valid, key=lambda c: (-c.rank_score, len(c.code), c.index))
    return ordered[:min(k, len(valid))]


def export_sft(samples: Sequence[DatasetSample], path: str | Path, *,
               source_corpus_id: str = "", config: dict | None = None,
               limits: ExecutionLimits = ExecutionLimits(),
               backend: ExecutorBackend | None = None) -> dict:
    """Write one JSON object per line and return the manifest.

    All samples are re-executed first; any program that no longer produces
    its recorded answer aborts the export before a byte is written.
    """
    backend = backend or MiniInterpreterBackend()
    for i, sample in enumerate(samples):
        gold = try_normalize_answer(sample.a)
        if gold is None:
            raise VerificationFailed(i, f"gold answer {sample.a!r} does not normalize")
        result, matches = execution_matches(sample.p, gold, limits, backend)
        if not matches:
            raise VerificationFailed(i, f"program produced {result.answer!r} "
                                        f"(status {result.status.value}), expected {sample.a!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            record = {"q": sample.q, "a": sample.a, "s": sample.s,
                      "m": sample.m, "p": sample.p}
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    config_blob = json.dumps(config or {}, sort_keys=True, separators=(",", ":"))
    return {
        "count": len(samples),
        "source_corpus_id": source_corpus_id,
        "config_hash": hashlib.sha256(config_blob.encode("utf-8")).hexdigest(),
        "out_path": str(path),
    }


def build_dataset(queries: Sequence[Query], teacher: ChatEndpoint, judge: ChatEndpoint,
                  client: ChatClient, n: int, k: int, out_path: str | Path, *,
                  source_corpus_id: str = "",
                  limits: ExecutionLimits = ExecutionLimits(),
                  backend: ExecutorBackend | None = None) -> dict:
    """Full pipeline over a seed corpus: sample, filter, rank, export.

    Retained candidates whose model document does not parse are dropped at
    sample construction (the exported model must be canonical); the count
    is reported in the manifest.
    """
    backend = backend or MiniInterpreterBackend()
    samples: list[DatasetSample] = []
    per_query: dict[str, int] = {}
    dropped_unparseable = 0
    for query in queries:
        if query.gold_answer is None:
            raise ValueError(f"query {query.id} has no gold answer")
        gold = try_normalize_answer(query.gold_answer)
        if gold is None:
            raise ValueError(f"query {query.id}: gold answer does not normalize")
        candidates = sample_candidates(query, teacher, client, n)
        valid = filter_by_execution(candidates, gold, limits, backend)
        retained = rank_by_self_evaluation(valid, judge, client, k, query)
        kept = 0
        for candidate in retained:
            parsed = parse_model(candidate.model_doc)
            if not isinstance(parsed, FormalModel):
                dropped_unparseable += 1
                continue
            samples.append(DatasetSample(q=query.question, a=query.gold_answer,
                                         s=candidate.think, m=serialize(parsed),
                                         p=candidate.code))
            kept += 1
        per_query[query.id] = kept
    manifest = export_sft(samples, out_path, source_corpus_id=source_corpus_id,
                          config={"n": n, "k": k}, limits=limits, backend=backend)
    manifest["per_query"] = per_query
    manifest["dropped_unparseable_model"] = dropped_unparseable
    return manifest
