"""A small autoregressive categorical policy over a finite token vocabulary.

The context is a fixed window of the last ``context_width`` tokens, one-hot
encoded and concatenated (positions before the sequence start contribute a
zero block). One tanh hidden layer maps the context to logits. The same
forward code serves three roles: differentiable evaluation for training
(parameters as autodiff leaves), constant evaluation for scoring, and
stepwise evaluation for sampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Value

CHECKPOINT_FORMAT_VERSION = 1

PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class PolicyParams:
    """Live policy parameters plus the training-step version stamp."""

    vocab_size: int
    context_width: int
    hidden: int
    arrays: dict[str, np.ndarray]
    version: int = 0

    @property
    def in_features(self) -> int:
        return self.vocab_size * self.context_width

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            vocab_size=self.vocab_size,
            context_width=self.context_width,
            hidden=self.hidden,
            arrays={k: v.copy() for k, v in self.arrays.items()},
            version=self.version,
        )

    def param_count(self) -> int:
        return sum(a.size for a in self.arrays.values())


@dataclass(frozen=True)
class SamplingParams:
    """Sampling restrictions: temperature, nucleus mass, and top-k cutoff.

    top_k is an integer in [1, vocab] or the string "all". temperature 0 is
    the argmax limit.
    """

    temperature: float = 1.0
    top_p: float = 1.0
    top_k: int | str = "all"

    def validate(self, vocab_size: int) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.top_k != "all" and not (isinstance(self.top_k, int) and 1 <= self.top_k <= vocab_size):
            raise ValueError(f"top_k must be 'all' or an int in [1, {vocab_size}], got {self.top_k}")


def init_policy(seed: int, vocab_size: int, context_width: int, hidden: int) -> PolicyParams:
    """Deterministic scaled-uniform init (bound 1/sqrt(fan_in) per layer)."""
    if vocab_size < 2:
        raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
    if context_width < 1 or hidden < 1:
        raise ValueError("context_width and hidden must be >= 1")
    rng = np.random.default_rng(seed)
    in_features = vocab_size * context_width
    bound1 = 1.0 / np.sqrt(in_features)
    bound2 = 1.0 / np.sqrt(hidden)
    arrays = {
        "w1": rng.uniform(-bound1, bound1, size=(in_features, hidden)),
        "b1": rng.uniform(-bound1, bound1, size=(1, hidden)),
        "w2": rng.uniform(-bound2, bound2, size=(hidden, vocab_size)),
        "b2": rng.uniform(-bound2, bound2, size=(1, vocab_size)),
    }
    return PolicyParams(vocab_size, context_width, hidden, arrays, version=0)


def param_leaves(params: PolicyParams) -> dict[str, Value]:
    """Wrap each parameter array as a trainable autodiff leaf."""
    return {name: Value(params.arrays[name], requires_grad=True) for name in PARAM_NAMES}


def context_features(params: PolicyParams, tokens: list[int], t: int) -> np.ndarray:
    """One-hot features of the w tokens preceding position t (zeros before start)."""
    v, w = params.vocab_size, params.context_width
    feat = np.zeros(v * w)
    for j in range(w):
        pos = t - w + j
        if pos >= 0:
            tok = tokens[pos]
            feat[j * v + tok] = 1.0
    return feat


def _feature_matrix(params: PolicyParams, prompt: list[int], response: list[int]) -> np.ndarray:
    tokens = list(prompt) + list(response)
    start = len(prompt)
    return np.stack([context_features(params, tokens, start + t) for t in range(len(response))])


def _forward_logits(leaves: dict[str, Value], x: np.ndarray) -> Value:
    # Bias add via an explicit ones-column matmul keeps every op at equal shapes.
    ones = np.ones((x.shape[0], 1))
    h = (Value(x) @ leaves["w1"] + Value(ones) @ leaves["b1"]).tanh()
    return h @ leaves["w2"] + Value(ones) @ leaves["b2"]


def logp_sequence(
    params: PolicyParams,
    prompt: list[int],
    response: list[int],
    leaves: dict[str, Value] | None = None,
) -> Value:
    """Per-token log-probabilities of `response` given `prompt`, length |response|.

    With `leaves` (from :func:`param_leaves`) the result is differentiable
    w.r.t. the parameters; without, it is a constant evaluated through the
    identical numeric path.
    """
    for tok in list(prompt) + list(response):
        if not 0 <= tok < params.vocab_size:
            raise ValueError(f"token {tok} out of range for vocab {params.vocab_size}")
    if not response:
        return Value(np.zeros(0))
    if leaves is None:
        leaves = {name: Value(params.arrays[name]) for name in PARAM_NAMES}
    x = _feature_matrix(params, prompt, response)
    logits = _forward_logits(leaves, x)
    return logits.log_softmax().gather(np.asarray(response, dtype=np.int64))


def step_logits(params: PolicyParams, tokens: list[int], t: int) -> np.ndarray:
    """Logits for position t given the token history, as a plain vector."""
    x = context_features(params, tokens, t)[None, :]
    ones = np.ones((1, 1))
    h = np.tanh(x @ params.arrays["w1"] + ones @ params.arrays["b1"])
    return (h @ params.arrays["w2"] + ones @ params.arrays["b2"])[0]


def _log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _restricted_probs(logits: np.ndarray, sampling: SamplingParams) -> np.ndarray:
    """Sampling distribution after temperature, top-k, and top-p restriction."""
    v = logits.shape[0]
    z = logits / sampling.temperature
    logp = _log_softmax_np(z)
    keep = np.ones(v, dtype=bool)
    if sampling.top_k != "all" and sampling.top_k < v:
        order = np.argsort(-logp, kind="stable")
        keep[:] = False
        keep[order[: sampling.top_k]] = True
    if sampling.top_p < 1.0:
        order = np.argsort(-logp, kind="stable")
        probs_sorted = np.exp(logp[order])
        inside = np.cumsum(probs_sorted) - probs_sorted < sampling.top_p
        inside[0] = True  # always keep the most likely token
        nucleus = np.zeros(v, dtype=bool)
        nucleus[order[inside]] = True
        keep &= nucleus
    probs = np.where(keep, np.exp(logp), 0.0)
    return probs / probs.sum()


def sample_sequence(
    params: PolicyParams,
    prompt: list[int],
    sampling: SamplingParams,
    max_len: int,
    rng: np.random.Generator | int,
    eos_token: int | None = None,
) -> tuple[list[int], np.ndarray, str]:
    """Autoregressively sample a response; returns (tokens, behavior log-probs, done reason).

    The returned log-probs are those of the unrestricted model distribution
    at the sampled tokens (as serving engines report them), so they match
    :func:`logp_sequence` under default SamplingParams.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    sampling.validate(params.vocab_size)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    tokens = list(prompt)
    response: list[int] = []
    logps: list[float] = []
    done = "length"
    for _ in range(max_len):
        logits = step_logits(params, tokens, len(tokens))
        raw_logp = _log_softmax_np(logits)
        if sampling.temperature == 0.0:
            tok = int(np.argmax(logits))
        else:
            probs = _restricted_probs(logits, sampling)
            u = rng.random()
            tok = int(np.searchsorted(np.cumsum(probs), u, side="right"))
            tok = min(tok, params.vocab_size - 1)
        response.append(tok)
        logps.append(float(raw_logp[tok]))
        tokens.append(tok)
        if eos_token is not None and tok == eos_token:
            done = "eos"
            break
    return response, np.array(logps), done


def entropy(params: PolicyParams, prompt: list[int], response: list[int]) -> float:
    """Mean per-step entropy (nats) of the next-token distribution along the response."""
    if not response:
        return 0.0
    tokens = list(prompt) + list(response)
    start = len(prompt)
    total = 0.0
    for t in range(len(response)):
        logp = _log_softmax_np(step_logits(params, tokens, start + t))
        p = np.exp(logp)
        total += float(-np.sum(np.where(p > 0, p * logp, 0.0)))
    return total / len(response)


def save_checkpoint(params: PolicyParams, path: str | Path) -> None:
    """Write a JSON checkpoint: name -> shape + row-major float64 values."""
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "vocab_size": params.vocab_size,
        "context_width": params.context_width,
        "hidden": params.hidden,
        "version": params.version,
        "arrays": {
            name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in params.arrays.items()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> PolicyParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version: {doc.get('format_version')}")
    arrays = {
        name: np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
        for name, spec in doc["arrays"].items()
    }
    return PolicyParams(
        vocab_size=doc["vocab_size"],
        context_width=doc["context_width"],
        hidden=doc["hidden"],
        arrays=arrays,
        version=doc["version"],
    )
