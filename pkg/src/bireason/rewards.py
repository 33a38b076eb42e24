"""Rule-based rewards and group-normalized advantages.

Rewards are verifiable checks only: answer correctness against the gold
answer plus an output-format bonus.  Advantages standardize each reward
within its sampling group (subtract the group mean, divide by the group's
population standard deviation), with a small floor guarding constant groups.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .executor import CanonicalAnswer, ExecStatus, ExecutionResult, answers_match, try_normalize_answer


@dataclass(frozen=True)
class RewardConfig:
    accuracy_weight: float = 1.0
    format_weight: float = 0.1
    std_floor: float = 1e-8

    def __post_init__(self) -> None:
        if self.accuracy_weight < 0 or self.format_weight < 0:
            raise ValueError("reward weights must be nonnegative")
        if self.std_floor <= 0:
            raise ValueError("std_floor must be positive")


@dataclass
class RewardedOutput:
    reward: float
    advantage: float
    format_ok: bool
    answer_ok: bool


@dataclass
class RewardedModel:
    model_reward: float
    advantage: float
    format_ok: bool
    outputs: list[RewardedOutput] = field(default_factory=list)


@dataclass
class RewardedGroup:
    """G model candidates, each with P scored outputs, for one question."""

    question_id: str
    models: list[RewardedModel]

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "models": [
                {
                    "model_reward": m.model_reward,
                    "advantage": m.advantage,
                    "format_ok": m.format_ok,
                    "outputs": [
                        {
                            "reward": o.reward,
                            "advantage": o.advantage,
                            "format_ok": o.format_ok,
                            "answer_ok": o.answer_ok,
                        }
                        for o in m.outputs
                    ],
                }
                for m in self.models
            ],
        }


def output_is_correct(result: ExecutionResult, gold: CanonicalAnswer, tol: float = 1e-6) -> bool:
    """Execution failure counts as a wrong answer."""
    if result.status is not ExecStatus.OK or result.answer is None:
        return False
    candidate = try_normalize_answer(result.answer, gold.kind)
    return candidate is not None and answers_match(candidate, gold, tol)


def score_output(result: ExecutionResult, gold: CanonicalAnswer, format_ok: bool,
                 cfg: RewardConfig) -> float:
    correct = output_is_correct(result, gold)
    return cfg.accuracy_weight * float(correct) + cfg.format_weight * float(format_ok)


def lower_advantages(rewards: Sequence[float], std_floor: float = 1e-8) -> np.ndarray:
    """Standardize a group of output rewards with the population deviation.

    Constant groups divide by the floor instead, so advantages stay finite
    and come out exactly zero.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("advantage group must be nonempty")
    if np.all(r == r[0]):
        # Mean rounding must not leak through the floor as ~1e-8 advantages.
        return np.zeros_like(r)
    std = float(r.std())  # population std
    return (r - r.mean()) / max(std, std_floor)


def upper_reward(lower_accuracies: Sequence[float], model_format_ok: bool,
                 cfg: RewardConfig) -> float:
    """Model-candidate reward: format bonus plus mean lower accuracy component."""
    acc = np.asarray(lower_accuracies, dtype=np.float64)
    if acc.size == 0:
        raise ValueError("need at least one lower-level accuracy component")
    return cfg.format_weight * float(model_format_ok) + float(acc.mean())


def upper_advantages(model_rewards: Sequence[float], std_floor: float = 1e-8) -> np.ndarray:
    """Same standardization as the lower level, across the G model candidates."""
    return lower_advantages(model_rewards, std_floor)


def build_rewarded_group(
    question_id: str,
    model_format_oks: Sequence[bool],
    output_results: Sequence[Sequence[tuple[ExecutionResult, bool]]],
    gold: CanonicalAnswer,
    cfg: RewardConfig,
) -> RewardedGroup:
    """Score a full G x P group: per-output rewards/advantages, then per-model.

    ``output_results[i][j]`` holds the execution result and format flag for
    output j of model candidate i.
    """
    if len(model_format_oks) != len(output_results):
        raise ValueError("one format flag per model candidate is required")
    models: list[RewardedModel] = []
    for format_ok, outputs in zip(model_format_oks, output_results):
        output_rewards = [score_output(res, gold, fmt, cfg) for res, fmt in outputs]
        accuracies = [
            cfg.accuracy_weight * float(output_is_correct(res, gold)) for res, _ in outputs
        ]
        advantages = lower_advantages(output_rewards, cfg.std_floor)
        scored = [
            RewardedOutput(
                reward=rew,
                advantage=float(adv),
                format_ok=fmt,
                answer_ok=output_is_correct(res, gold),
            )
            for rew, adv, (res, fmt) in zip(output_rewards, advantages, outputs)
        ]
        models.append(RewardedModel(
            model_reward=upper_reward(accuracies, format_ok, cfg),
            advantage=0.0,
            format_ok=format_ok,
            outputs=scored,
        ))
    model_adv = upper_advantages([m.model_reward for m in models], cfg.std_floor)
    for model, adv in zip(models, model_adv):
        model.advantage = float(adv)
    return RewardedGroup(question_id=question_id, models=models)
