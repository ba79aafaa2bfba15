"""Merkle accumulator over endorsed reports.

Each finalization period collects reports into a batch, shuffles them with
a seeded Fisher-Yates pass to break arrival-order correlation, and builds
a SHA-256 hash tree over the result. Leaf and interior hashes are
domain-separated (0x00/0x01 prefixes); an unpaired node at any level is
promoted unchanged. Digest operations are counted so the roughly-2n cost
budget of tree construction can be asserted.
"""

from __future__ import annotations

import hashlib
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
DIGEST_LEN = 32

SIDE_LEFT = 0x00
SIDE_RIGHT = 0x01


def leaf_hash(report_bytes: bytes) -> bytes:
    """Domain-separated leaf digest; empty input is rejected."""
    if not report_bytes:
        raise ValueError("cannot hash an empty report")
    return hashlib.sha256(LEAF_PREFIX + report_bytes).digest()


def node_hash(left: bytes, right: bytes) -> bytes:
    """Domain-separated interior digest of two 32-byte children."""
    if len(left) != DIGEST_LEN or len(right) != DIGEST_LEN:
        raise ValueError("interior nodes take two 32-byte digests")
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def _build_levels(leaves: list[bytes]) -> tuple[list[list[bytes]], int]:
    """All tree levels bottom-up plus the interior digest count."""
    levels = [leaves]
    interior = 0
    current = leaves
    while len(current) > 1:
        nxt = []
        for i in range(0, len(current) - 1, 2):
            nxt.append(node_hash(current[i], current[i + 1]))
            interior += 1
        if len(current) % 2 == 1:
            nxt.append(current[-1])  # odd node promoted unchanged
        levels.append(nxt)
        current = nxt
    return levels, interior


@dataclass(frozen=True)
class MerkleProof:
    """Sibling path for one leaf; side bytes give the sibling's position."""

    leaf_index: int
    siblings: tuple[tuple[int, bytes], ...]

    def to_bytes(self) -> bytes:
        out = [self.leaf_index.to_bytes(4, "little"), len(self.siblings).to_bytes(2, "little")]
        for side, digest in self.siblings:
            out.append(bytes([side]) + digest)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MerkleProof":
        if len(data) < 6:
            raise ValueError("proof serialization too short")
        index = int.from_bytes(data[:4], "little")
        count = int.from_bytes(data[4:6], "little")
        if len(data) != 6 + count * (1 + DIGEST_LEN):
            raise ValueError("proof length does not match sibling count")
        siblings = []
        for k in range(count):
            off = 6 + k * (1 + DIGEST_LEN)
            side = data[off]
            if side not in (SIDE_LEFT, SIDE_RIGHT):
                raise ValueError(f"bad side byte {side:#x}")
            siblings.append((side, data[off + 1 : off + 1 + DIGEST_LEN]))
        return cls(index, tuple(siblings))


@dataclass(frozen=True)
class MerkleTree:
    leaves: tuple[bytes, ...]
    levels: tuple[tuple[bytes, ...], ...]
    root: bytes
    digest_count: int


def build_tree(items: Sequence[bytes], workers: int = 1) -> MerkleTree:
    """Hash raw report bytes into leaves and assemble every level.

    `workers` > 1 fans the leaf hashing out to a thread pool; the result
    is bit-identical to the sequential build.
    """
    if not items:
        raise ValueError("cannot build a tree over zero reports")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            leaves = list(pool.map(leaf_hash, items))
    else:
        leaves = [leaf_hash(item) for item in items]
    levels, interior = _build_levels(leaves)
    return MerkleTree(
        leaves=tuple(leaves),
        levels=tuple(tuple(level) for level in levels),
        root=levels[-1][0],
        digest_count=len(leaves) + interior,
    )


def build_root(items: Sequence[bytes], workers: int = 1) -> tuple[bytes, int]:
    """Root and digest count only, for callers that never need proofs."""
    tree = build_tree(items, workers=workers)
    return tree.root, tree.digest_count


def prove(tree: MerkleTree, index: int) -> MerkleProof:
    """Sibling path for the leaf at `index` of a finalized tree."""
    if not 0 <= index < len(tree.leaves):
        raise IndexError(f"leaf index {index} out of range")
    siblings = []
    at = index
    for level in tree.levels[:-1]:
        if at % 2 == 0:
            if at + 1 < len(level):
                siblings.append((SIDE_RIGHT, level[at + 1]))
            # else: unpaired node was promoted, nothing to fold at this level
        else:
            siblings.append((SIDE_LEFT, level[at - 1]))
        at //= 2
    return MerkleProof(index, tuple(siblings))


def verify_proof(root: bytes, leaf: bytes, proof: MerkleProof) -> bool:
    """Fold the leaf through the sibling path and compare against the root."""
    if len(leaf) != DIGEST_LEN:
        return False
    acc = leaf
    for side, digest in proof.siblings:
        if len(digest) != DIGEST_LEN:
            return False
        acc = node_hash(digest, acc) if side == SIDE_LEFT else node_hash(acc, digest)
    return acc == root


@dataclass
class EpochBatch:
    """Reports accumulated for one finalization period."""

    epoch_id: int
    reports: list[bytes] = field(default_factory=list)
    shuffle_seed: int = 0
    finalized: bool = False

    def append(self, report_bytes: bytes) -> None:
        if self.finalized:
            raise ValueError(f"epoch {self.epoch_id} already finalized")
        if not report_bytes:
            raise ValueError("cannot queue an empty report")
        self.reports.append(report_bytes)


def finalize_epoch(batch: EpochBatch, workers: int = 1) -> MerkleTree:
    """Shuffle the batch in place and build its tree.

    The shuffle is the seeded Fisher-Yates pass of ``random.Random``; after
    finalization ``batch.reports`` holds the published leaf order and the
    batch refuses further appends or a second finalization.
    """
    if batch.finalized:
        raise ValueError(f"epoch {batch.epoch_id} already finalized")
    if not batch.reports:
        raise ValueError(f"epoch {batch.epoch_id} has no reports")
    random.Random(batch.shuffle_seed).shuffle(batch.reports)
    batch.finalized = True
    return build_tree(batch.reports, workers=workers)
