"""
Logit providers: the language-model side of generation, entropy analysis and perplexity.

Remote wire contract (JSON over HTTP POST to the endpoint URL):

  request   {"request_id": "req-000001", "context": [int, ...]}
  response  {"request_id": "req-000001", "vocab_size": int, "logits": [float, ...]}

`logits` must hold exactly `vocab_size` finite numbers and `vocab_size` must equal
the size the client was configured with. Transport failures and HTTP 5xx are
retried up to `retries` extra times; every other failure is raised at once.
"""
from __future__ import annotations
import itertools, threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import requests

from .config import REMOTE
from .tokens import LogitVector, TokenSequence, as_sequence


class ProviderError(RuntimeError):
    def __init__(self, message: str, request_id: Optional[str] = None):
        super().__init__(f"[{request_id}] {message}" if request_id else message)
        self.request_id = request_id


class TransportError(ProviderError):
    pass


class LogitLengthError(ProviderError):
    pass


class NonFiniteLogitsError(ProviderError):
    pass


class LogitProvider(ABC):
    """Counts every logit request; subclasses only compute."""

    def __init__(self, vocab_size: int):
        if vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        self._vocab_size = int(vocab_size)
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    @property
    def call_count(self) -> int:
        return self._calls

    def logits(self, context: TokenSequence | Sequence[int]) -> LogitVector:
        with self._lock:
            self._calls += 1
        return self._compute(as_sequence(context))

    @abstractmethod
    def _compute(self, context: TokenSequence) -> LogitVector:
        ...


def call_count(provider: LogitProvider) -> int:
    return provider.call_count


# -------------------------
# Toy first-order model
# -------------------------

@dataclass(frozen=True)
class ToyModelSpec:
    """rows[t] are the logits after token t; rows[vocab_size] is the start row."""
    vocab_size: int
    rows: np.ndarray
    syntax_burst: float = 0.0

    def __post_init__(self):
        if self.rows.shape != (self.vocab_size + 1, self.vocab_size):
            raise ValueError(f"toy rows must have shape {(self.vocab_size + 1, self.vocab_size)}")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("toy rows must be finite")


def build_toy_spec(
    vocab_size: int,
    syntax_ids: Sequence[int] = (),
    seed: int = 0,
    syntax_burst: float = 0.3,
    syntax_bias: float = 0.0,
    spread: float = 1.0,
    burst_margin: float = 12.0,
) -> ToyModelSpec:
    """
    Random first-order table. Each row is, with probability `syntax_burst`,
    dominated by one syntax token (its logit sits `burst_margin` above the row
    max); `syntax_bias` shifts all syntax logits elsewhere (very negative values
    mute syntax tokens).
    """
    rng = np.random.default_rng(seed)
    rows = rng.normal(0.0, spread, size=(vocab_size + 1, vocab_size))
    syn = np.asarray(sorted(set(int(s) for s in syntax_ids)), dtype=np.int64)
    if syn.size:
        rows[:, syn] += syntax_bias
        for r in range(vocab_size + 1):
            if rng.random() < syntax_burst:
                s = int(syn[rng.integers(syn.size)])
                rows[r, s] = rows[r].max() + burst_margin
    rows.setflags(write=False)
    return ToyModelSpec(vocab_size=vocab_size, rows=rows, syntax_burst=syntax_burst)


def uniform_toy_spec(vocab_size: int) -> ToyModelSpec:
    rows = np.zeros((vocab_size + 1, vocab_size))
    rows.setflags(write=False)
    return ToyModelSpec(vocab_size=vocab_size, rows=rows)


def toy_logits(spec: ToyModelSpec, context: TokenSequence | Sequence[int]) -> LogitVector:
    ctx = as_sequence(context)
    row = ctx.tokens[-1] if ctx.tokens else spec.vocab_size
    # first-order: only the last token matters, so only it is range-checked
    if not 0 <= row <= spec.vocab_size or (ctx.tokens and row == spec.vocab_size):
        raise ValueError(f"token {row} outside toy vocabulary of size {spec.vocab_size}")
    return np.array(spec.rows[row], dtype=np.float64)


class ToyProvider(LogitProvider):
    def __init__(self, spec: ToyModelSpec):
        super().__init__(spec.vocab_size)
        self.spec = spec

    def _compute(self, context: TokenSequence) -> LogitVector:
        return toy_logits(self.spec, context)


# -------------------------
# Remote inference server
# -------------------------

class RemoteProvider(LogitProvider):
    def __init__(
        self,
        endpoint: str,
        vocab_size: int,
        timeout: float = REMOTE.timeout,
        retries: int = REMOTE.retries,
        session: Optional[requests.Session] = None,
    ):
        super().__init__(vocab_size)
        if not endpoint:
            raise ValueError("remote provider needs an endpoint URL (STONEMARK_ENDPOINT or --provider remote:URL)")
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = max(0, int(retries))
        self.session = session or requests.Session()
        self._ids = itertools.count(1)
        self._id_lock = threading.Lock()

    def _next_request_id(self) -> str:
        with self._id_lock:
            return f"req-{next(self._ids):06d}"

    def _compute(self, context: TokenSequence) -> LogitVector:
        rid = self._next_request_id()
        payload = {"request_id": rid, "context": list(context.tokens)}
        last: Optional[str] = None
        for _attempt in range(self.retries + 1):
            try:
                r = self.session.post(self.endpoint, json=payload, timeout=self.timeout)
            except requests.RequestException as e:
                last = f"transport failure: {e}"
                continue
            if r.status_code >= 500:
                last = f"server error HTTP {r.status_code}"
                continue
            if r.status_code != 200:
                raise TransportError(f"HTTP {r.status_code} from {self.endpoint}", rid)
            return self._parse(r, rid)
        raise TransportError(f"{last} (after {self.retries + 1} attempts)", rid)

    def _parse(self, r: requests.Response, rid: str) -> LogitVector:
        try:
            js = r.json()
            values = js["logits"]
            size = int(js.get("vocab_size", len(values)))
        except Exception as e:
            raise TransportError(f"malformed response: {e}", rid)
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size != self.vocab_size or size != self.vocab_size:
            raise LogitLengthError(
                f"expected {self.vocab_size} logits, got {arr.size} (server vocab_size={size})", rid
            )
        if not np.all(np.isfinite(arr)):
            raise NonFiniteLogitsError("response contains non-finite logits", rid)
        return arr


def remote_logits(
    endpoint: str,
    context: TokenSequence | Sequence[int],
    vocab_size: int,
    timeout: float = REMOTE.timeout,
    retries: int = REMOTE.retries,
) -> LogitVector:
    return RemoteProvider(endpoint, vocab_size, timeout=timeout, retries=retries).logits(context)


def make_provider(
    spec: str,
    vocab_size: int,
    syntax_ids: Sequence[int] = (),
    seed: int = 0,
    timeout: float = REMOTE.timeout,
    retries: int = REMOTE.retries,
) -> LogitProvider:
    """'toy', 'remote' (endpoint from STONEMARK_ENDPOINT) or 'remote:<url>'."""
    if spec == "toy":
        return ToyProvider(build_toy_spec(vocab_size, syntax_ids=syntax_ids, seed=seed))
    if spec == "remote" or spec.startswith("remote:"):
        endpoint = spec.partition(":")[2] or REMOTE.endpoint
        return RemoteProvider(endpoint, vocab_size, timeout=timeout, retries=retries)
    raise ValueError(f"unknown provider '{spec}' (use 'toy' or 'remote:<url>')")
