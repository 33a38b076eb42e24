"""Bilevel group-relative policy optimization on toy tabular policies.

Two softmax policies are trained in alternation: an upper policy that
picks a model candidate per question and a lower policy that picks an
output per model.  Both ascend the clipped surrogate objective over
group-normalized advantages; the task is small enough that expected
rewards, optima, and best responses are all exactly enumerable, which is
what makes the gradient and convergence checks possible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .rewards import lower_advantages, upper_advantages


@dataclass
class ToyHierarchicalTask:
    """Finite question -> model -> output hierarchy with a total reward table."""

    questions: tuple[str, ...]
    model_ids: dict[str, tuple[str, ...]]   # per question
    output_ids: dict[str, tuple[str, ...]]  # per model
    rewards: dict[tuple[str, str, str], float]

    def __post_init__(self) -> None:
        if not self.questions:
            raise ValueError("task needs at least one question")
        for q in self.questions:
            models = self.model_ids.get(q, ())
            if not models:
                raise ValueError(f"question {q!r} has no model candidates")
            for m in models:
                outputs = self.output_ids.get(m, ())
                if not outputs:
                    raise ValueError(f"model {m!r} has no output candidates")
                for o in outputs:
                    r = self.rewards.get((q, m, o))
                    if r is None:
                        raise ValueError(f"reward table missing entry {(q, m, o)}")
                    if not 0 <= r <= 1:
                        raise ValueError(f"reward out of [0,1] at {(q, m, o)}: {r}")

    def models(self, q: str) -> tuple[str, ...]:
        return self.model_ids[q]

    def outputs(self, m: str) -> tuple[str, ...]:
        return self.output_ids[m]

    def reward(self, q: str, m: str, o: str) -> float:
        return self.rewards[(q, m, o)]

    def all_models(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for q in self.questions:
            for m in self.model_ids[q]:
                seen.setdefault(m)
        return tuple(seen)


def dominant_model_task(n_questions: int = 4, n_models: int = 4,
                        n_outputs: int = 4) -> ToyHierarchicalTask:
    """One model per question dominates: all its outputs pay 1, others 0."""
    questions = tuple(f"q{i}" for i in range(n_questions))
    model_ids: dict[str, tuple[str, ...]] = {}
    output_ids: dict[str, tuple[str, ...]] = {}
    rewards: dict[tuple[str, str, str], float] = {}
    for q in questions:
        models = tuple(f"{q}_m{j}" for j in range(n_models))
        model_ids[q] = models
        for j, m in enumerate(models):
            outputs = tuple(f"{m}_o{k}" for k in range(n_outputs))
            output_ids[m] = outputs
            for o in outputs:
                rewards[(q, m, o)] = 1.0 if j == 0 else 0.0
    return ToyHierarchicalTask(questions, model_ids, output_ids, rewards)


def single_output_task(n_questions: int = 2, n_models: int = 3,
                       n_outputs: int = 4) -> ToyHierarchicalTask:
    """Every model has exactly one rewarding output, so the lower level
    must actually learn; the correct output index varies by model."""
    questions = tuple(f"q{i}" for i in range(n_questions))
    model_ids: dict[str, tuple[str, ...]] = {}
    output_ids: dict[str, tuple[str, ...]] = {}
    rewards: dict[tuple[str, str, str], float] = {}
    for i, q in enumerate(questions):
        models = tuple(f"{q}_m{j}" for j in range(n_models))
        model_ids[q] = models
        for j, m in enumerate(models):
            outputs = tuple(f"{m}_o{k}" for k in range(n_outputs))
            output_ids[m] = outputs
            star = (i + j) % n_outputs
            for k, o in enumerate(outputs):
                rewards[(q, m, o)] = 1.0 if k == star else 0.0
    return ToyHierarchicalTask(questions, model_ids, output_ids, rewards)


def constant_reward_task(value: float = 0.5, n_questions: int = 2, n_models: int = 2,
                         n_outputs: int = 2) -> ToyHierarchicalTask:
    questions = tuple(f"q{i}" for i in range(n_questions))
    model_ids: dict[str, tuple[str, ...]] = {}
    output_ids: dict[str, tuple[str, ...]] = {}
    rewards: dict[tuple[str, str, str], float] = {}
    for q in questions:
        models = tuple(f"{q}_m{j}" for j in range(n_models))
        model_ids[q] = models
        for m in models:
            outputs = tuple(f"{m}_o{k}" for k in range(n_outputs))
            output_ids[m] = outputs
            for o in outputs:
                rewards[(q, m, o)] = value
    return ToyHierarchicalTask(questions, model_ids, output_ids, rewards)


class SoftmaxPolicy:
    """Tabular softmax: one logit row per context over its candidates."""

    def __init__(self, candidates: Mapping[str, Sequence[str]],
                 logits: Mapping[str, np.ndarray] | None = None):
        self.candidates = {ctx: tuple(cands) for ctx, cands in candidates.items()}
        for ctx, cands in self.candidates.items():
            if not cands:
                raise ValueError(f"context {ctx!r} has no candidates")
        if logits is None:
            self.logits = {ctx: np.zeros(len(cands))
                           for ctx, cands in self.candidates.items()}
        else:
            self.logits = {}
            for ctx, cands in self.candidates.items():
                row = np.asarray(logits[ctx], dtype=np.float64)
                if row.shape != (len(cands),):
                    raise ValueError(f"logit row shape mismatch for {ctx!r}")
                self.logits[ctx] = row.copy()

    @classmethod
    def uniform(cls, candidates: Mapping[str, Sequence[str]]) -> "SoftmaxPolicy":
        return cls(candidates)

    def probs(self, ctx: str) -> np.ndarray:
        z = self.logits[ctx]
        e = np.exp(z - z.max())
        p = e / e.sum()
        assert abs(float(p.sum()) - 1.0) <= 1e-12
        return p

    def log_probs(self, ctx: str) -> np.ndarray:
        z = self.logits[ctx]
        shifted = z - z.max()
        return shifted - math.log(float(np.exp(shifted).sum()))

    def sample(self, ctx: str, rng: np.random.Generator) -> int:
        return int(rng.choice(len(self.candidates[ctx]), p=self.probs(ctx)))

    def argmax(self, ctx: str) -> str:
        return self.candidates[ctx][int(np.argmax(self.logits[ctx]))]

    def copy(self) -> "SoftmaxPolicy":
        return SoftmaxPolicy(self.candidates, self.logits)

    def apply_gradient(self, grad: Mapping[str, np.ndarray], lr: float) -> None:
        """Ascent step; rows absent from grad stay put."""
        for ctx, g in grad.items():
            self.logits[ctx] = self.logits[ctx] + lr * np.asarray(g, dtype=np.float64)
        for ctx in grad:
            self.probs(ctx)  # conservation check after every update

    def snapshot(self) -> dict[str, list[float]]:
        return {ctx: [float(v) for v in row] for ctx, row in self.logits.items()}


@dataclass(frozen=True)
class SampledGroup:
    """One group of candidates sampled from a single context, with advantages."""

    context: str
    indices: tuple[int, ...]
    advantages: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.indices:
            raise ValueError("group must be nonempty")
        if len(self.indices) != len(self.advantages):
            raise ValueError("one advantage per sampled candidate")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    batch_size: int = 4       # B questions per update
    group_size_upper: int = 4  # G model candidates
    group_size_lower: int = 4  # P outputs
    n_lower: int = 4           # N_l updates per iteration
    n_upper: int = 4           # N_h updates per iteration
    epsilon: float = 0.2
    lr_upper: float = 0.1
    lr_lower: float = 0.1
    seed: int = 0
    std_floor: float = 1e-8
    kl_coeff: float = 0.0  # optional penalty hook; 0 reproduces the plain objective

    def __post_init__(self) -> None:
        counts = (self.iterations, self.batch_size, self.group_size_upper,
                  self.group_size_lower, self.n_lower, self.n_upper)
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be >= 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if self.lr_upper <= 0 or self.lr_lower <= 0:
            raise ValueError("learning rates must be positive")
        if self.std_floor <= 0:
            raise ValueError("std_floor must be positive")
        if self.kl_coeff < 0:
            raise ValueError("kl_coeff must be >= 0")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations, "batch_size": self.batch_size,
            "group_size_upper": self.group_size_upper,
            "group_size_lower": self.group_size_lower,
            "n_lower": self.n_lower, "n_upper": self.n_upper,
            "epsilon": self.epsilon, "lr_upper": self.lr_upper,
            "lr_lower": self.lr_lower, "seed": self.seed,
            "std_floor": self.std_floor, "kl_coeff": self.kl_coeff,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


# --- clipped surrogate objective and its exact gradient ----------------------


def _kl(policy: SoftmaxPolicy, old: SoftmaxPolicy, ctx: str) -> float:
    p = policy.probs(ctx)
    lp = policy.log_probs(ctx)
    lq = old.log_probs(ctx)
    return float(np.sum(p * (lp - lq)))


def surrogate_objective(policy: SoftmaxPolicy, old: SoftmaxPolicy,
                        groups: Sequence[SampledGroup], epsilon: float,
                        kl_coeff: float = 0.0) -> float:
    """Mean over groups of the per-group mean clipped term
    min(rho*A, clip(rho, 1-eps, 1+eps)*A)."""
    if not groups:
        raise ValueError("need at least one group")
    total = 0.0
    for group in groups:
        p_new = policy.probs(group.context)
        p_old = old.probs(group.context)
        terms = []
        for idx, adv in zip(group.indices, group.advantages):
            if p_old[idx] <= 0:
                raise ZeroDivisionError("sampled candidate has zero old probability")
            rho = float(p_new[idx] / p_old[idx])
            clipped = min(max(rho, 1 - epsilon), 1 + epsilon)
            terms.append(min(rho * adv, clipped * adv))
        contribution = sum(terms) / len(terms)
        if kl_coeff:
            contribution -= kl_coeff * _kl(policy, old, group.context)
        total += contribution
    return total / len(groups)


def upper_objective(theta_x: SoftmaxPolicy, theta_x_old: SoftmaxPolicy,
                    groups: Sequence[SampledGroup], epsilon: float,
                    kl_coeff: float = 0.0) -> float:
    """J_h over G-sized model groups, one group per sampled question."""
    return surrogate_objective(theta_x, theta_x_old, groups, epsilon, kl_coeff)


def lower_objective(theta_y: SoftmaxPolicy, theta_y_old: SoftmaxPolicy,
                    groups: Sequence[SampledGroup], epsilon: float,
                    kl_coeff: float = 0.0) -> float:
    """J_l over P-sized output groups, one group per sampled model."""
    return surrogate_objective(theta_y, theta_y_old, groups, epsilon, kl_coeff)


def objective_gradient(kind: str, policy: SoftmaxPolicy, old: SoftmaxPolicy,
                       groups: Sequence[SampledGroup], epsilon: float,
                       kl_coeff: float = 0.0) -> dict[str, np.ndarray]:
    """Exact gradient of the clipped surrogate w.r.t. the policy logits.

    A sample sits in the flat clip region (and contributes zero) exactly
    when its ratio has moved past the clip boundary on the side its
    advantage rewards: rho > 1+eps with A > 0, or rho < 1-eps with A < 0.
    Otherwise the active branch is rho*A, whose logit gradient is
    A * rho * (onehot - probs).
    """
    if kind not in ("upper", "lower"):
        raise ValueError("kind must be 'upper' or 'lower'")
    if not groups:
        raise ValueError("need at least one group")
    grad: dict[str, np.ndarray] = {}
    n_groups = len(groups)
    for group in groups:
        ctx = group.context
        p_new = policy.probs(ctx)
        p_old = old.probs(ctx)
        row = grad.setdefault(ctx, np.zeros(len(p_new)))
        scale = 1.0 / (len(group.indices) * n_groups)
        for idx, adv in zip(group.indices, group.advantages):
            if adv == 0:
                continue
            rho = float(p_new[idx] / p_old[idx])
            clipped_and_worse = (adv > 0 and rho > 1 + epsilon) or \
                                (adv < 0 and rho < 1 - epsilon)
            if clipped_and_worse:
                continue
            onehot = np.zeros(len(p_new))
            onehot[idx] = 1.0
            row += scale * adv * rho * (onehot - p_new)
        if kl_coeff:
            lp = policy.log_probs(ctx)
            lq = old.log_probs(ctx)
            kl = float(np.sum(p_new * (lp - lq)))
            row -= (kl_coeff / n_groups) * p_new * ((lp - lq) - kl)
    return grad


def gradient_norm(grad: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g))) for g in grad.values()))


# --- supervised warm-up loss --------------------------------------------------


def sft_loss(policy: SoftmaxPolicy, dataset: Sequence[tuple[str, str]]) -> float:
    """Negative sum of log-likelihoods of the target candidates."""
    total = 0.0
    for ctx, target in dataset:
        cands = policy.candidates[ctx]
        if target not in cands:
            raise ValueError(f"target {target!r} not a candidate of {ctx!r}")
        total -= float(policy.log_probs(ctx)[cands.index(target)])
    return total


def sft_gradient(policy: SoftmaxPolicy, dataset: Sequence[tuple[str, str]]) -> dict[str, np.ndarray]:
    grad: dict[str, np.ndarray] = {}
    for ctx, target in dataset:
        cands = policy.candidates[ctx]
        p = policy.probs(ctx)
        onehot = np.zeros(len(cands))
        onehot[cands.index(target)] = 1.0
        row = grad.setdefault(ctx, np.zeros(len(cands)))
        row += p - onehot  # gradient of the loss w.r.t. logits
    return grad


def sft_step(policy: SoftmaxPolicy, dataset: Sequence[tuple[str, str]], lr: float) -> None:
    grad = sft_gradient(policy, dataset)
    policy.apply_gradient({ctx: -g for ctx, g in grad.items()}, lr)  # descend the loss


# --- exact enumeration oracles ------------------------------------------------


def expected_lower_reward(task: ToyHierarchicalTask, theta_x: SoftmaxPolicy,
                          theta_y: SoftmaxPolicy) -> float:
    """Exact E_q E_{m~theta_x} E_{o~theta_y} [r], uniform over questions."""
    total = 0.0
    for q in task.questions:
        p_m = theta_x.probs(q)
        for mi, m in enumerate(task.models(q)):
            p_o = theta_y.probs(m)
            for oi, o in enumerate(task.outputs(m)):
                total += float(p_m[mi]) * float(p_o[oi]) * task.reward(q, m, o)
    return total / len(task.questions)


def enumerate_optimum(task: ToyHierarchicalTask) -> tuple[float, dict[str, tuple[str, str]]]:
    """Best deterministic (model, output) per question and the optimal reward."""
    best: dict[str, tuple[str, str]] = {}
    total = 0.0
    for q in task.questions:
        q_best = None
        q_reward = -1.0
        for m in task.models(q):
            for o in task.outputs(m):
                r = task.reward(q, m, o)
                if r > q_reward:
                    q_reward = r
                    q_best = (m, o)
        assert q_best is not None
        best[q] = q_best
        total += q_reward
    return total / len(task.questions), best


def best_response_lower(task: ToyHierarchicalTask,
                        theta_x: SoftmaxPolicy) -> tuple[dict[str, str], float]:
    """Exhaustive argmax output per model under the current upper policy.

    Returns the per-model choice and the expected reward it achieves.
    """
    weight = 1.0 / len(task.questions)
    scores: dict[str, dict[str, float]] = {}
    for q in task.questions:
        p_m = theta_x.probs(q)
        for mi, m in enumerate(task.models(q)):
            per_output = scores.setdefault(m, {o: 0.0 for o in task.outputs(m)})
            for o in task.outputs(m):
                per_output[o] += weight * float(p_m[mi]) * task.reward(q, m, o)
    choice: dict[str, str] = {}
    total = 0.0
    for m, per_output in scores.items():
        best_o = max(per_output, key=lambda o: (per_output[o], o))
        choice[m] = best_o
        total += per_output[best_o]
    return choice, total


def bilevel_gap(task: ToyHierarchicalTask, theta_x: SoftmaxPolicy,
                theta_y: SoftmaxPolicy, cfg: TrainConfig | None = None) -> float:
    """Expected-reward shortfall of theta_y against the exhaustive best response.

    Computed on exact enumerated rewards, so it is zero only when the lower
    policy is (effectively) the best response under the current upper policy.
    The config argument is accepted for interface symmetry; the exact
    computation needs none of it.
    """
    del cfg
    _, best_value = best_response_lower(task, theta_x)
    return best_value - expected_lower_reward(task, theta_x, theta_y)


# --- Algorithm: alternating updates -------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    expected_reward: float
    j_h: float
    j_l: float
    grad_norm_upper: float
    grad_norm_lower: float
    theta_x: dict[str, list[float]]
    theta_y: dict[str, list[float]]

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "expected_reward": self.expected_reward,
            "j_h": self.j_h, "j_l": self.j_l,
            "grad_norm_upper": self.grad_norm_upper,
            "grad_norm_lower": self.grad_norm_lower,
            "theta_x": self.theta_x, "theta_y": self.theta_y,
        }


@dataclass
class TrainHistory:
    config: TrainConfig
    records: list[IterationRecord] = field(default_factory=list)

    def final_expected_reward(self) -> float:
        if not self.records:
            raise ValueError("history is empty")
        return self.records[-1].expected_reward

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"config": self.config.to_dict()}, sort_keys=True) + "\n")
            for record in self.records:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def _sample_lower_groups(task: ToyHierarchicalTask, theta_x_old: SoftmaxPolicy,
                         theta_y_old: SoftmaxPolicy, cfg: TrainConfig,
                         rng: np.random.Generator) -> list[SampledGroup]:
    groups = []
    for _ in range(cfg.batch_size):
        q = task.questions[int(rng.integers(len(task.questions)))]
        m = task.models(q)[theta_x_old.sample(q, rng)]
        outputs = task.outputs(m)
        indices = tuple(theta_y_old.sample(m, rng) for _ in range(cfg.group_size_lower))
        rewards = [task.reward(q, m, outputs[i]) for i in indices]
        advantages = tuple(float(a) for a in lower_advantages(rewards, cfg.std_floor))
        groups.append(SampledGroup(context=m, indices=indices, advantages=advantages))
    return groups


def _sample_upper_groups(task: ToyHierarchicalTask, theta_x_old: SoftmaxPolicy,
                         theta_y: SoftmaxPolicy, cfg: TrainConfig,
                         rng: np.random.Generator) -> list[SampledGroup]:
    groups = []
    for _ in range(cfg.batch_size):
        q = task.questions[int(rng.integers(len(task.questions)))]
        models = task.models(q)
        indices = tuple(theta_x_old.sample(q, rng) for _ in range(cfg.group_size_upper))
        model_rewards = []
        for mi in indices:
            m = models[mi]
            outputs = task.outputs(m)
            samples = [task.reward(q, m, outputs[theta_y.sample(m, rng)])
                       for _ in range(cfg.group_size_lower)]
            model_rewards.append(float(np.mean(samples)))
        advantages = tuple(float(a) for a in upper_advantages(model_rewards, cfg.std_floor))
        groups.append(SampledGroup(context=q, indices=indices, advantages=advantages))
    return groups


def train_alternating(task: ToyHierarchicalTask, cfg: TrainConfig) -> TrainHistory:
    """Alternating ascent: N_l lower updates, then N_h upper updates, per
    iteration.  Old policies are snapshotted once at each inner-loop entry
    and held fixed across that loop's updates.  Fully deterministic given
    the seed (counter-based generator).
    """
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    theta_x = SoftmaxPolicy.uniform({q: task.models(q) for q in task.questions})
    theta_y = SoftmaxPolicy.uniform({m: task.outputs(m) for m in task.all_models()})
    history = TrainHistory(config=cfg)

    for iteration in range(cfg.iterations):
        # Lower phase: theta_x held fixed, theta_y ascends J_l.
        theta_x_old = theta_x.copy()
        theta_y_old = theta_y.copy()
        j_l = 0.0
        grad_norm_lower = 0.0
        for _ in range(cfg.n_lower):
            groups = _sample_lower_groups(task, theta_x_old, theta_y_old, cfg, rng)
            grad = objective_gradient("lower", theta_y, theta_y_old, groups,
                                      cfg.epsilon, cfg.kl_coeff)
            theta_y.apply_gradient(grad, cfg.lr_lower)
            j_l = lower_objective(theta_y, theta_y_old, groups, cfg.epsilon, cfg.kl_coeff)
            grad_norm_lower = gradient_norm(grad)

        # Upper phase: fresh snapshot of theta_x; outputs drawn from the
        # just-updated theta_y when scoring each model candidate.
        theta_x_old = theta_x.copy()
        j_h = 0.0
        grad_norm_upper = 0.0
        for _ in range(cfg.n_upper):
            groups = _sample_upper_groups(task, theta_x_old, theta_y, cfg, rng)
            grad = objective_gradient("upper", theta_x, theta_x_old, groups,
                                      cfg.epsilon, cfg.kl_coeff)
            theta_x.apply_gradient(grad, cfg.lr_upper)
            j_h = upper_objective(theta_x, theta_x_old, groups, cfg.epsilon, cfg.kl_coeff)
            grad_norm_upper = gradient_norm(grad)

        history.records.append(IterationRecord(
            iteration=iteration,
            expected_reward=expected_lower_reward(task, theta_x, theta_y),
            j_h=j_h, j_l=j_l,
            grad_norm_upper=grad_norm_upper,
            grad_norm_lower=grad_norm_lower,
            theta_x=theta_x.snapshot(),
            theta_y=theta_y.snapshot(),
        ))
    return history
