"""CTC loss, greedy decoding, charset handling, and accuracy metrics.

Class index 0 is the blank; the default English charset is blank + digits +
lowercase letters (37 classes).  The loss runs the log-space forward/backward
recursions in f64 and exposes its gradient through the autodiff graph via the
alpha-beta posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, DatasetError, FeasibilityError
from .tensor import Tensor

BLANK = 0

DEFAULT_SYMBOLS = "0123456789abcdefghijklmnopqrstuvwxyz"


class Charset:
    """Ordered symbol table; index 0 is the implicit blank."""

    def __init__(self, symbols: str = DEFAULT_SYMBOLS):
        if len(set(symbols)) != len(symbols):
            raise ContractError("charset symbols must be unique")
        if not symbols:
            raise ContractError("charset needs at least one non-blank symbol")
        self.symbols = symbols
        self._index = {ch: i + 1 for i, ch in enumerate(symbols)}

    @property
    def size(self) -> int:
        return len(self.symbols) + 1

    def encode(self, text: str) -> "LabelSeq":
        indices = []
        for ch in text.lower():
            if ch not in self._index:
                raise DatasetError(f"character {ch!r} not in charset")
            indices.append(self._index[ch])
        return LabelSeq(tuple(indices))

    def decode(self, label: "LabelSeq") -> str:
        return "".join(self.symbols[i - 1] for i in label.indices)

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for ch in self.symbols:
                fh.write(ch + "\n")

    @classmethod
    def from_file(cls, path) -> "Charset":
        with open(path, "r", encoding="utf-8") as fh:
            symbols = "".join(line.rstrip("\n") for line in fh if line.rstrip("\n"))
        return cls(symbols)


@dataclass(frozen=True)
class LabelSeq:
    """Ground-truth or decoded character indices; never contains blank."""

    indices: tuple[int, ...]

    def __post_init__(self):
        if any(i == BLANK for i in self.indices):
            raise ContractError("label sequences must not contain the blank index")
        if any(i < 0 for i in self.indices):
            raise ContractError("label indices must be non-negative")

    def __len__(self) -> int:
        return len(self.indices)


def collapse(path) -> tuple[int, ...]:
    """CTC de-duplication: merge consecutive repeats, then strip blanks."""
    out = []
    prev = None
    for cls in path:
        if cls != prev:
            out.append(int(cls))
        prev = cls
    return tuple(c for c in out if c != BLANK)


def greedy_decode(logits) -> list[LabelSeq]:
    """Per-timestep argmax (ties to the lower class index) followed by collapse."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.ndim != 3:
        raise ContractError(f"greedy_decode expects [b, T, N] logits, got {data.shape}")
    paths = np.argmax(data, axis=-1)
    return [LabelSeq(collapse(row)) for row in paths]


def min_timesteps(label: LabelSeq) -> int:
    """Shortest path length that collapses to the label: one step per symbol
    plus a separating blank between each adjacent repeat."""
    repeats = sum(a == b for a, b in zip(label.indices, label.indices[1:]))
    return len(label) + repeats


def _extended(label: LabelSeq) -> np.ndarray:
    ext = np.zeros(2 * len(label) + 1, dtype=np.int64)
    ext[1::2] = label.indices
    return ext


def _forward_backward(lp: np.ndarray, ext: np.ndarray):
    """Log-space alpha/beta over the blank-interleaved label.

    lp: [T, N] log probabilities (f64).  Returns (-log P, grad wrt lp).
    """
    T_, _ = lp.shape
    S = len(ext)
    ninf = -np.inf

    can_skip = np.zeros(S, dtype=bool)
    can_skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    alpha = np.full((T_, S), ninf)
    alpha[0, 0] = lp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T_):
        prev = alpha[t - 1]
        cand = prev.copy()
        cand[1:] = np.logaddexp(cand[1:], prev[:-1])
        cand[can_skip] = np.logaddexp(cand[can_skip], prev[:-2][can_skip[2:]])
        alpha[t] = cand + lp[t, ext]

    log_p = alpha[-1, -1] if S == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])

    beta = np.full((T_, S), ninf)
    beta[-1, -1] = lp[-1, ext[-1]]
    if S > 1:
        beta[-1, -2] = lp[-1, ext[-2]]
    can_skip_fwd = np.zeros(S, dtype=bool)
    can_skip_fwd[:-2] = can_skip[2:]
    for t in range(T_ - 2, -1, -1):
        nxt = beta[t + 1]
        cand = nxt.copy()
        cand[:-1] = np.logaddexp(cand[:-1], nxt[1:])
        cand[can_skip_fwd] = np.logaddexp(cand[can_skip_fwd], nxt[2:][can_skip_fwd[:-2]])
        beta[t] = cand + lp[t, ext]

    # Posterior over extended states; alpha and beta both include the emission
    # at t, so divide it out once.
    with np.errstate(invalid="ignore"):
        occupancy = np.exp(alpha + beta - lp[:, ext] - log_p)   # [T, S]
    occupancy = np.nan_to_num(occupancy, nan=0.0, posinf=0.0)
    grad = np.zeros_like(lp)
    t_idx = np.broadcast_to(np.arange(T_)[:, None], occupancy.shape)
    k_idx = np.broadcast_to(ext[None, :], occupancy.shape)
    np.add.at(grad, (t_idx, k_idx), -occupancy)
    return -log_p, grad


def ctc_loss(log_probs: Tensor, labels: list[LabelSeq]) -> Tensor:
    """Mean negative log-likelihood over the batch, differentiable wrt log_probs."""
    if log_probs.data.ndim != 3:
        raise ContractError(f"ctc_loss expects [b, T, N] log probs, got {log_probs.shape}")
    b, T_, N = log_probs.shape
    if len(labels) != b:
        raise ContractError(f"batch size {b} != number of labels {len(labels)}")
    for i, label in enumerate(labels):
        if any(idx >= N for idx in label.indices):
            raise ContractError(f"sample {i}: label index out of range for {N} classes")
        need = min_timesteps(label)
        if need > T_:
            raise FeasibilityError(
                f"sample {i}: label of length {len(label)} needs "
                f"{need} timesteps but only {T_} are available")

    lp64 = log_probs.data.astype(np.float64)
    total = 0.0
    grads = np.zeros_like(lp64)
    for i, label in enumerate(labels):
        loss_i, grad_i = _forward_backward(lp64[i], _extended(label))
        total += loss_i
        grads[i] = grad_i
    mean_loss = np.asarray(total / b, dtype=log_probs.dtype)

    if not (log_probs.requires_grad or log_probs._parents):
        return Tensor(mean_loss)

    def bwd(g):
        scale = float(np.asarray(g).reshape(-1)[0])
        if log_probs.grad is None:
            log_probs.grad = (scale / b * grads).astype(log_probs.dtype)
        else:
            log_probs.grad = log_probs.grad + (scale / b * grads).astype(log_probs.dtype)

    return Tensor(mean_loss, requires_grad=True, parents=(log_probs,), backward_fn=bwd)


@dataclass(frozen=True)
class EditAccuracy:
    exact: bool
    norm_edit_sim: float


def _levenshtein(a: tuple, b: tuple) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def edit_accuracy(pred: LabelSeq, truth: LabelSeq) -> EditAccuracy:
    """Exact-match flag plus 1 - levenshtein/max(len); two empties score 1."""
    exact = pred.indices == truth.indices
    longest = max(len(pred), len(truth))
    if longest == 0:
        return EditAccuracy(True, 1.0)
    dist = _levenshtein(pred.indices, truth.indices)
    return EditAccuracy(exact, 1.0 - dist / longest)
