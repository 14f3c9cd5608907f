"""Toy autoregressive tasks with terminal scalar rewards, plus grouped rollout.

Rewards are pure functions of (prompt, response) in [0, 1]; shaping is
deliberately absent so the setup mirrors verifier-scored generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .policy import PolicyParams, SamplingParams, sample_sequence


@dataclass(frozen=True)
class Task:
    name: str
    vocab_size: int
    prompt_sampler: Callable[[np.random.Generator], list[int]]
    reward_fn: Callable[[list[int], list[int]], float]
    max_response_len: int
    eos_token: int | None = None


@dataclass
class Trajectory:
    """One sampled response with everything the trainer needs later."""

    prompt: list[int]
    response: list[int]
    behavior_logp: np.ndarray
    reward: float
    group_id: int
    versions: np.ndarray
    done_reason: str = "length"

    def __len__(self) -> int:
        return len(self.response)


@dataclass
class TrajectoryBatch:
    trajectories: list[Trajectory] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def token_count(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.trajectories])

    @property
    def group_ids(self) -> np.ndarray:
        return np.array([t.group_id for t in self.trajectories], dtype=np.int64)


# digit_sum vocabulary: 0-9 digits, then separator / end / pad.
DIGIT_SUM_VOCAB = 13
SEP_TOKEN = 10
EOS_TOKEN = 11
PAD_TOKEN = 12


def digit_sum_task(n_digits: int, max_response_len: int = 4) -> Task:
    """Sum k prompt digits mod 10; full credit for the answer digit then EOS.

    Partial credit 0.5 when only the first response token matches the answer.
    """
    if n_digits < 1:
        raise ValueError(f"n_digits must be >= 1, got {n_digits}")

    def prompt_sampler(rng: np.random.Generator) -> list[int]:
        return [int(d) for d in rng.integers(0, 10, size=n_digits)] + [SEP_TOKEN]

    def reward_fn(prompt: list[int], response: list[int]) -> float:
        answer = sum(prompt[:n_digits]) % 10
        if list(response) == [answer, EOS_TOKEN]:
            return 1.0
        if response and response[0] == answer:
            return 0.5
        return 0.0

    return Task(
        name=f"digit_sum_{n_digits}",
        vocab_size=DIGIT_SUM_VOCAB,
        prompt_sampler=prompt_sampler,
        reward_fn=reward_fn,
        max_response_len=max_response_len,
        eos_token=EOS_TOKEN,
    )


def bandit_task(n_arms: int, arm_means: list[float] | None = None) -> Task:
    """Single-token task: the reward is the chosen arm's fixed mean payout."""
    if n_arms < 2:
        raise ValueError(f"n_arms must be >= 2, got {n_arms}")
    if arm_means is None:
        arm_means = list(np.linspace(0.1, 0.9, n_arms))
    if len(arm_means) != n_arms:
        raise ValueError(f"arm_means must have {n_arms} entries, got {len(arm_means)}")
    if not all(0.0 <= m <= 1.0 for m in arm_means):
        raise ValueError("arm_means must lie in [0, 1]")
    means = tuple(float(m) for m in arm_means)

    def prompt_sampler(rng: np.random.Generator) -> list[int]:
        return []

    def reward_fn(prompt: list[int], response: list[int]) -> float:
        return means[response[0]] if response else 0.0

    return Task(
        name=f"bandit_{n_arms}",
        vocab_size=n_arms,
        prompt_sampler=prompt_sampler,
        reward_fn=reward_fn,
        max_response_len=1,
        eos_token=None,
    )


TASK_BUILDERS: dict[str, Callable[..., Task]] = {
    "digit_sum": lambda **kw: digit_sum_task(**kw),
    "bandit": lambda **kw: bandit_task(**kw),
}


def build_task(name: str, **kwargs) -> Task:
    if name not in TASK_BUILDERS:
        raise ValueError(f"unknown task {name!r}; known: {sorted(TASK_BUILDERS)}")
    return TASK_BUILDERS[name](**kwargs)


def group_rollout(
    task: Task,
    params: PolicyParams,
    n_prompts: int,
    group_size: int,
    sampling: SamplingParams,
    seed: int,
) -> TrajectoryBatch:
    """Sample group_size responses for each of n_prompts prompts.

    Trajectories carry the prompt index as group id and the generating
    policy's version on every token. Seeding is per trajectory, so the
    result is independent of scheduling.
    """
    if n_prompts < 1 or group_size < 1:
        raise ValueError("n_prompts and group_size must be >= 1")
    root = np.random.SeedSequence(seed)
    prompt_seqs = root.spawn(n_prompts)
    batch = TrajectoryBatch()
    for b in range(n_prompts):
        children = prompt_seqs[b].spawn(group_size + 1)
        prompt = task.prompt_sampler(np.random.default_rng(children[0]))
        for g in range(group_size):
            response, logp, done = sample_sequence(
                params,
                prompt,
                sampling,
                task.max_response_len,
                np.random.default_rng(children[1 + g]),
                eos_token=task.eos_token,
            )
            batch.trajectories.append(
                Trajectory(
                    prompt=prompt,
                    response=response,
                    behavior_logp=logp,
                    reward=float(task.reward_fn(prompt, response)),
                    group_id=b,
                    versions=np.full(len(response), params.version, dtype=np.int64),
                    done_reason=done,
                )
            )
    return batch
