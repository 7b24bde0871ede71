"""Memory-extract loading, size banding, and the two candidate scanners.

The marker scan keys off the 'KSSM'/'3LLS' ASCII strings that the Windows
crypto library leaves near session key material ('MSSK' and 'SSL3' read
little-endian) and collects every nearby window that clears an entropy gate.
The standard scan instead anchors on the captured explicit nonce: wherever it
occurs, the 4 bytes in front of it are a candidate implicit IV, and wherever
that IV value recurs a TLS 1.2 key-block layout is hypothesised around it.

Scanners are pure functions of immutable inputs. Per-extract work may fan out
to a thread pool; results are merged and ordered so that serial and parallel
runs are byte-for-byte identical.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .capture import SessionCapture
from .entropy import entropy_profile as _entropy_profile
from .entropy import shannon_entropy
from .errors import EmptyDirectory, NoCandidates, UnreadableFile

MB = 1 << 20
IV_MARKER = b"3LLS"
KEY_MARKER = b"KSSM"
IV_LEN = 4

# Files in an extract directory that are metadata, not memory contents.
_METADATA_NAMES = {"manifest.json", "groundtruth.json"}


@dataclass(frozen=True)
class MemoryExtract:
    id: int
    name: str
    data: bytes
    size_bytes: int


@dataclass(frozen=True)
class ExtractSet:
    extracts: tuple[MemoryExtract, ...]
    bands: dict[int, tuple[int, ...]]

    def in_band_order(self) -> list[MemoryExtract]:
        return [self.extracts[i] for band in (1, 2, 3) for i in self.bands[band]]

    @property
    def total_bytes(self) -> int:
        return sum(e.size_bytes for e in self.extracts)


def band_for_size(size_bytes: int) -> int:
    """Band 1: [1 MB, 8 MB) where key-bearing structures live; band 2: smaller;
    band 3: larger. Boundaries are inclusive-exclusive so the bands partition."""
    if MB <= size_bytes < 8 * MB:
        return 1
    if size_bytes < MB:
        return 2
    return 3


def _make_extract_set(extracts: list[MemoryExtract]) -> ExtractSet:
    bands: dict[int, list[int]] = {1: [], 2: [], 3: []}
    for extract in extracts:
        bands[band_for_size(extract.size_bytes)].append(extract.id)
    return ExtractSet(
        extracts=tuple(extracts),
        bands={b: tuple(ids) for b, ids in bands.items()},
    )


def load_extracts(directory) -> ExtractSet:
    """Load every regular file in ``directory`` as a memory extract.

    Ids follow lexicographic filename order so repeat runs are identical.
    Metadata files (manifest.json) and empty files are skipped.
    """
    base = Path(directory)
    names = sorted(p.name for p in base.iterdir() if p.is_file() and p.name not in _METADATA_NAMES)
    extracts = []
    for name in names:
        try:
            data = (base / name).read_bytes()
        except OSError as exc:
            raise UnreadableFile(base / name, exc) from exc
        if not data:
            continue
        extracts.append(MemoryExtract(id=len(extracts), name=name, data=data, size_bytes=len(data)))
    if not extracts:
        raise EmptyDirectory(f"no loadable extract files in {base}")
    return _make_extract_set(extracts)


def extract_set_from_buffers(named_buffers: list[tuple[str, bytes]]) -> ExtractSet:
    """Build an ExtractSet directly from in-memory buffers (test convenience)."""
    extracts = [
        MemoryExtract(id=i, name=name, data=bytes(data), size_bytes=len(data))
        for i, (name, data) in enumerate(named_buffers)
    ]
    if not extracts:
        raise EmptyDirectory("no buffers supplied")
    return _make_extract_set(extracts)


@dataclass(frozen=True)
class ScanConfig:
    key_len_bytes: int = 32
    iv_entropy_threshold: float = 1.5
    key_entropy_threshold: float | None = None  # defaults to 0.9 * log2(key length)
    max_iv_distance: int = 64
    max_key_distance: int = 128
    step: int = 4
    min_artefact_gap: int = 1000
    counter_nonce_bound: int = 256

    def __post_init__(self):
        if self.key_len_bytes not in (16, 32):
            raise ValueError("key_len_bytes must be 16 or 32")
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.max_iv_distance < self.step or self.max_key_distance < self.step:
            raise ValueError("search distances must be at least one step")
        if self.key_entropy_threshold is None:
            object.__setattr__(self, "key_entropy_threshold", 0.9 * math.log2(self.key_len_bytes))
        if self.iv_entropy_threshold < 0 or self.key_entropy_threshold < 0:
            raise ValueError("entropy thresholds must be non-negative")
        if self.min_artefact_gap < 0:
            raise ValueError("min_artefact_gap must be non-negative")


@dataclass(frozen=True)
class CandidateIv:
    value: bytes
    extract_id: int
    offset: int
    entropy: float


@dataclass(frozen=True)
class CandidateKey:
    value: bytes
    extract_id: int
    offset: int
    entropy: float


class BlockHypothesis(Enum):
    IV_WAS_CLIENT = "iv_was_client"
    IV_WAS_SERVER = "iv_was_server"


@dataclass(frozen=True)
class CandidateKeyBlock:
    client_key: bytes
    server_key: bytes
    client_iv: bytes
    server_iv: bytes
    extract_id: int
    offset: int  # of the client key slot
    hypothesis: BlockHypothesis
    iv_hit_offset: int  # where the matched IV value sat; pruning clusters on this


def find_all(data: bytes, pattern: bytes) -> list[int]:
    """Every occurrence of ``pattern``, overlapping matches included."""
    hits = []
    pos = data.find(pattern)
    while pos != -1:
        hits.append(pos)
        pos = data.find(pattern, pos + 1)
    return hits


def entropy_profile(extract: MemoryExtract, window: int, threshold: float,
                    region_windows: int = 256) -> list[tuple[int, int]]:
    """Per-region counts of windows above the entropy threshold; see entropy module."""
    return _entropy_profile(extract.data, window, threshold, region_windows)


def _map_extracts(extracts: list[MemoryExtract], fn, workers: int):
    if workers > 1 and len(extracts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, extracts))
    return [fn(e) for e in extracts]


def _scan_windows_one(extract: MemoryExtract, cfg: ScanConfig):
    data = extract.data
    if data.find(KEY_MARKER) == -1:
        return [], []
    ivs = []
    for marker in find_all(data, IV_MARKER):
        base = marker + len(IV_MARKER)
        for dist in range(0, cfg.max_iv_distance + 1, cfg.step):
            start = base + dist
            window = data[start : start + IV_LEN]
            if len(window) < IV_LEN:
                break
            ent = shannon_entropy(window)
            if ent > cfg.iv_entropy_threshold:
                ivs.append(CandidateIv(bytes(window), extract.id, start, ent))
    keys = []
    for marker in find_all(data, KEY_MARKER):
        base = marker + len(KEY_MARKER)
        for dist in range(0, cfg.max_key_distance + 1, cfg.step):
            start = base + dist
            window = data[start : start + cfg.key_len_bytes]
            if len(window) < cfg.key_len_bytes:
                break
            ent = shannon_entropy(window)
            if ent > cfg.key_entropy_threshold:
                keys.append(CandidateKey(bytes(window), extract.id, start, ent))
    return keys, ivs


def scan_windows(
    extracts: ExtractSet, cfg: ScanConfig, workers: int = 1
) -> tuple[list[CandidateKey], list[CandidateIv]]:
    """Marker scan over all extracts in band order 1, 2, 3.

    An extract only participates when the key marker occurs in it at all.
    Candidates are deduplicated by value, keeping the first sighting in band
    order, then sorted by (extract_id, offset).
    """
    ordered = extracts.in_band_order()
    results = _map_extracts(ordered, lambda e: _scan_windows_one(e, cfg), workers)

    seen_keys: dict[bytes, CandidateKey] = {}
    seen_ivs: dict[bytes, CandidateIv] = {}
    for keys, ivs in results:
        for cand in keys:
            seen_keys.setdefault(cand.value, cand)
        for cand in ivs:
            seen_ivs.setdefault(cand.value, cand)

    order = lambda c: (c.extract_id, c.offset)
    return sorted(seen_keys.values(), key=order), sorted(seen_ivs.values(), key=order)


def _prune_hits(offsets: list[int], gap: int) -> list[int]:
    """Greedy keep-lowest pruning: drop offsets within ``gap`` of the last kept."""
    kept = []
    for off in sorted(offsets):
        if not kept or off - kept[-1] >= gap:
            kept.append(off)
    return kept


def _blocks_at_hit(data: bytes, extract_id: int, p: int, value: bytes, cfg: ScanConfig,
                   key_gate) -> list[CandidateKeyBlock]:
    """Both key-block layouts that would place an IV slot at offset ``p``.

    Layout is client_key || server_key || client_iv || server_iv. The matched
    value may be either IV slot, so two hypotheses are formed and kept when
    both key windows clear the entropy gate.
    """
    k = cfg.key_len_bytes
    blocks = []
    # matched value is the client IV: keys sit at p-2k and p-k
    if p - 2 * k >= 0 and p + 8 <= len(data):
        client_key = data[p - 2 * k : p - k]
        server_key = data[p - k : p]
        if key_gate(client_key) and key_gate(server_key):
            blocks.append(
                CandidateKeyBlock(
                    client_key=bytes(client_key),
                    server_key=bytes(server_key),
                    client_iv=value,
                    server_iv=bytes(data[p + 4 : p + 8]),
                    extract_id=extract_id,
                    offset=p - 2 * k,
                    hypothesis=BlockHypothesis.IV_WAS_CLIENT,
                    iv_hit_offset=p,
                )
            )
    # matched value is the server IV: the block starts 4 bytes earlier still
    if p - 2 * k - 4 >= 0:
        client_key = data[p - 2 * k - 4 : p - k - 4]
        server_key = data[p - k - 4 : p - 4]
        if key_gate(client_key) and key_gate(server_key):
            blocks.append(
                CandidateKeyBlock(
                    client_key=bytes(client_key),
                    server_key=bytes(server_key),
                    client_iv=bytes(data[p - 4 : p]),
                    server_iv=value,
                    extract_id=extract_id,
                    offset=p - 2 * k - 4,
                    hypothesis=BlockHypothesis.IV_WAS_SERVER,
                    iv_hit_offset=p,
                )
            )
    return blocks


def scan_standard(
    extracts: ExtractSet,
    capture: SessionCapture,
    cfg: ScanConfig,
    workers: int = 1,
) -> list[CandidateKeyBlock]:
    """Explicit-nonce scan: nonce occurrences -> candidate implicit IVs ->
    key-block hypotheses wherever an IV value recurs.

    The 4 bytes preceding each nonce occurrence are gated on entropy and kept
    as candidate IV values (the contiguous salt || explicit layout of the GCM
    nonce buffer). Every later occurrence of a candidate value spawns the two
    block hypotheses. Hits closer than ``min_artefact_gap`` within one extract
    collapse onto the lowest offset; the two hypotheses of a single hit are
    alternatives, not separate artefacts, so they never prune each other.
    """
    nonce = capture.first_explicit_nonce
    ordered = sorted(extracts.extracts, key=lambda e: e.id)

    hit_lists = _map_extracts(ordered, lambda e: find_all(e.data, nonce), workers)

    iv_values: list[bytes] = []
    seen_values: set[bytes] = set()
    iv_candidates: list[CandidateIv] = []
    for extract, hits in zip(ordered, hit_lists):
        for off in hits:
            if off < IV_LEN:
                continue
            segment = extract.data[off - IV_LEN : off]
            ent = shannon_entropy(segment)
            if ent <= cfg.iv_entropy_threshold:
                continue
            value = bytes(segment)
            iv_candidates.append(CandidateIv(value, extract.id, off - IV_LEN, ent))
            if value not in seen_values:
                seen_values.add(value)
                iv_values.append(value)

    if not iv_values:
        return []

    key_gate = lambda seg: shannon_entropy(seg) > cfg.key_entropy_threshold

    def _scan_one(extract: MemoryExtract) -> list[CandidateKeyBlock]:
        occurrences = sorted(
            (p, value) for value in iv_values for p in find_all(extract.data, value)
        )
        per_hit: dict[int, list[CandidateKeyBlock]] = {}
        for p, value in occurrences:
            blocks = _blocks_at_hit(extract.data, extract.id, p, value, cfg, key_gate)
            if blocks:
                per_hit.setdefault(p, []).extend(blocks)
        kept = _prune_hits(list(per_hit), cfg.min_artefact_gap)
        return [block for p in kept for block in per_hit[p]]

    results = _map_extracts(ordered, _scan_one, workers)
    merged = [block for blocks in results for block in blocks]
    merged.sort(key=lambda b: (b.extract_id, b.offset, b.hypothesis.value))
    return merged


def pair_candidates(
    keys: list[CandidateKey], ivs: list[CandidateIv]
) -> list[tuple[CandidateKey, CandidateIv]]:
    """Cross product of candidates as an ordered trial list.

    Same-extract pairs come first, then closer key/IV offsets; list positions
    break remaining ties so the ordering is total and reproducible.
    """
    if not keys or not ivs:
        raise NoCandidates("cannot pair an empty candidate list")
    pairs = [
        (0 if k.extract_id == v.extract_id else 1, abs(k.offset - v.offset), ki, vi)
        for ki, k in enumerate(keys)
        for vi, v in enumerate(ivs)
    ]
    pairs.sort()
    return [(keys[ki], ivs[vi]) for _, _, ki, vi in pairs]
