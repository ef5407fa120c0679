"""Request streams: trace files and synthetic Zipf workloads with phase shifts.

Every source materializes to a ``uint64`` numpy array of key identifiers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np

DEFAULT_ZIPF = dict(n=100_000, s=0.9, length=8_000_000, phases=4)


class TraceError(OSError):
    def __init__(self, path, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


def hash_token(token: str, seed: int = 0) -> int:
    key = (seed & ((1 << 64) - 1)).to_bytes(8, "little")
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest(), "little")


def read_trace(path, fmt: str = "plain", seed: int = 0) -> np.ndarray:
    """Read a key trace.

    ``plain`` has one key token per line; ``csv`` has ``timestamp,key`` rows
    with the timestamp ignored.  Blank lines are skipped.
    """
    if fmt not in ("plain", "csv"):
        raise ValueError(f"unknown trace format {fmt!r}")
    keys: List[int] = []
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise TraceError(path, 0, f"cannot open trace: {exc.strerror or exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, 1):
            try:
                line = raw.decode("utf-8").strip()
            except UnicodeDecodeError:
                raise TraceError(path, lineno, "invalid UTF-8") from None
            if not line:
                continue
            if fmt == "plain":
                parts = line.split()
                if len(parts) != 1:
                    raise TraceError(path, lineno, "expected a single key token")
                token = parts[0]
            else:
                parts = [p.strip() for p in line.split(",")]
                if len(parts) < 2 or not parts[1]:
                    raise TraceError(path, lineno, "expected 'timestamp,key'")
                token = parts[1]
            keys.append(hash_token(token, seed))
    return np.array(keys, dtype=np.uint64)


def zipf_probabilities(n: int, s: float) -> np.ndarray:
    weights = np.arange(1, n + 1, dtype=np.float64) ** -s
    return weights / weights.sum()


def phase_lengths(length: int, phases: Union[int, Sequence[int]]) -> List[int]:
    if isinstance(phases, int):
        if phases < 1:
            raise ValueError("need at least one phase")
        base, extra = divmod(length, phases)
        return [base + (1 if i < extra else 0) for i in range(phases)]
    lengths = list(phases)
    if sum(lengths) != length:
        raise ValueError("phase lengths must add up to the stream length")
    return lengths


def zipf_stream(n: int, s: float, length: int, seed: int = 0, phases: Union[int, Sequence[int]] = 1) -> np.ndarray:
    """I.i.d. Zipf(s) ranks over n keys.

    Each phase maps ranks to keys through its own random permutation, so the
    popular set changes abruptly at every phase boundary.
    """
    if n < 1 or s < 0:
        raise ValueError("need n >= 1 and s >= 0")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(zipf_probabilities(n, s))
    cdf[-1] = 1.0
    out = []
    for plen in phase_lengths(length, phases):
        perm = rng.permutation(n).astype(np.uint64)
        ranks = np.searchsorted(cdf, rng.random(plen), side="right")
        out.append(perm[np.minimum(ranks, n - 1)])
    return np.concatenate(out) if out else np.empty(0, dtype=np.uint64)


@dataclass
class WorkloadSource:
    """Deterministic description of a request stream."""

    kind: str
    path: str = ""
    fmt: str = "plain"
    n: int = 0
    s: float = 0.0
    length: int = 0
    phases: Union[int, tuple] = 1
    children: list = field(default_factory=list)

    def keys(self, seed: int = 0) -> np.ndarray:
        if self.kind == "file":
            return read_trace(self.path, self.fmt, seed)
        if self.kind == "zipf":
            return zipf_stream(self.n, self.s, self.length, seed, self.phases)
        if self.kind == "concat":
            parts = [child.keys(seed) for child in self.children]
            return np.concatenate(parts) if parts else np.empty(0, dtype=np.uint64)
        raise ValueError(f"unknown workload kind {self.kind!r}")

    def phase_boundaries(self) -> List[int]:
        """Request indices at which a new phase starts (zipf only)."""
        if self.kind != "zipf":
            return []
        return np.cumsum(phase_lengths(self.length, self.phases))[:-1].tolist()

    def describe(self) -> str:
        if self.kind == "file":
            return f"file:{self.path}" + (":csv" if self.fmt == "csv" else "")
        if self.kind == "zipf":
            return f"zipf:{self.n},{self.s:g},{self.length},{self.phases}"
        return "concat:" + "+".join(c.describe() for c in self.children)


def parse_workload(text: str) -> WorkloadSource:
    """Parse ``file:PATH[:csv]`` or ``zipf:N,S,LEN[,PHASES]``; ``+`` concatenates."""
    if "+" in text and not text.startswith("file:"):
        return WorkloadSource("concat", children=[parse_workload(p) for p in text.split("+")])
    kind, _, rest = text.partition(":")
    if kind == "file":
        if not rest:
            raise ValueError("file workload needs a path")
        if rest.endswith(":csv"):
            return WorkloadSource("file", path=rest[:-4], fmt="csv")
        return WorkloadSource("file", path=rest)
    if kind == "zipf":
        parts = rest.split(",")
        if len(parts) not in (3, 4):
            raise ValueError("zipf workload is zipf:N,S,LEN[,PHASES]")
        try:
            n, s, length = int(parts[0]), float(parts[1]), int(float(parts[2]))
            phases = int(parts[3]) if len(parts) == 4 else 1
        except ValueError:
            raise ValueError(f"bad zipf parameters {rest!r}") from None
        if n < 1 or s < 0 or length < 1 or phases < 1:
            raise ValueError(f"zipf parameters out of range: {rest!r}")
        return WorkloadSource("zipf", n=n, s=s, length=length, phases=phases)
    raise ValueError(f"unknown workload {text!r}; expected file:... or zipf:...")


def default_workload() -> WorkloadSource:
    return WorkloadSource("zipf", **DEFAULT_ZIPF)
