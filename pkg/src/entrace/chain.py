"""Simulated blockchain exposing the anchoring contract surface.

The contract stores a 32-byte digest at most once, remembering the block
number of first storage; lookups of unknown digests return 0. Block
production is a monotone counter advanced by the simulation clock, which
is all the anchoring protocol consumes from a real chain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

DIGEST_LEN = 32
GENESIS_BLOCK = 1


@dataclass(frozen=True)
class AnchorReceipt:
    digest: bytes
    block_number: int
    already_stored: bool


class DigestNotStoredError(KeyError):
    """Raised when a plausibility query names a digest the chain never saw."""


def _check_digest(digest: bytes) -> None:
    if not isinstance(digest, (bytes, bytearray)) or len(digest) != DIGEST_LEN:
        raise ValueError(f"digest must be {DIGEST_LEN} bytes")


class SimChain:
    """Single-writer simulated chain; reads are safe without the writer."""

    def __init__(self) -> None:
        self._block_number = GENESIS_BLOCK
        self._digests: dict[bytes, int] = {}
        self.store_calls = 0

    @property
    def block_number(self) -> int:
        return self._block_number

    def advance_block(self, k: int = 1) -> int:
        """Produce `k` new blocks; returns the new head number."""
        if k < 1:
            raise ValueError("must advance by at least one block")
        self._block_number += k
        return self._block_number

    def store(self, digest: bytes) -> AnchorReceipt:
        """Record the digest at the current block unless already present."""
        _check_digest(digest)
        digest = bytes(digest)
        self.store_calls += 1
        existing = self._digests.get(digest, 0)
        if existing:
            return AnchorReceipt(digest, existing, True)
        self._digests[digest] = self._block_number
        return AnchorReceipt(digest, self._block_number, False)

    def get_stored(self, digest: bytes) -> int:
        """Block number of first storage, or 0 for unknown digests."""
        _check_digest(digest)
        return self._digests.get(bytes(digest), 0)

    def is_stored(self, digest: bytes) -> bool:
        return self.get_stored(digest) > 0

    def plausibility_window(
        self,
        digest: bytes,
        expected_epoch: int,
        blocks_per_epoch: int,
        slack_epochs: int = 1,
    ) -> bool:
        """Whether the digest landed within its epoch's block span, give or take.

        Epoch `e` nominally spans blocks [e*bpe + 1, (e+1)*bpe]; the window
        widens by `slack_epochs` on each side, inclusive at both bounds.
        """
        if blocks_per_epoch < 1:
            raise ValueError("blocks_per_epoch must be positive")
        stored = self.get_stored(digest)
        if stored == 0:
            raise DigestNotStoredError(f"digest {bytes(digest).hex()} not stored")
        low = max(GENESIS_BLOCK, (expected_epoch - slack_epochs) * blocks_per_epoch + 1)
        high = (expected_epoch + 1 + slack_epochs) * blocks_per_epoch
        return low <= stored <= high

    def export_state(self) -> dict:
        """JSON-friendly snapshot for auditor consumption."""
        return {
            "block_number": self._block_number,
            "digests": {digest.hex(): block for digest, block in sorted(self._digests.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.export_state(), sort_keys=True, indent=2)

    @classmethod
    def from_state(cls, state: dict) -> "SimChain":
        chain = cls()
        chain._block_number = int(state["block_number"])
        for hex_digest, block in state["digests"].items():
            chain._digests[bytes.fromhex(hex_digest)] = int(block)
        return chain
