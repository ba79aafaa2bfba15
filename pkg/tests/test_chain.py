import json
import random

import pytest

from entrace.chain import DigestNotStoredError, SimChain


def _digest(seed: int) -> bytes:
    return random.Random(seed).randbytes(32)


def test_genesis_and_advance():
    chain = SimChain()
    assert chain.block_number == 1
    assert chain.advance_block(1) == 2
    assert chain.advance_block(10) == 12
    assert chain.advance_block(5) == 17
    with pytest.raises(ValueError):
        chain.advance_block(0)
    with pytest.raises(ValueError):
        chain.advance_block(-3)


def test_store_semantics_match_contract():
    chain = SimChain()
    chain.advance_block(6)  # now at block 7
    digest = _digest(1)
    first = chain.store(digest)
    assert (first.digest, first.block_number, first.already_stored) == (digest, 7, False)
    chain.advance_block(2)  # now at block 9
    second = chain.store(digest)
    assert second.block_number == 7
    assert second.already_stored is True
    other = chain.store(_digest(2))
    assert other.block_number == 9
    assert other.already_stored is False


def test_get_stored_returns_zero_for_unknown():
    chain = SimChain()
    assert chain.get_stored(_digest(3)) == 0
    assert not chain.is_stored(_digest(3))
    chain.store(_digest(3))
    assert chain.get_stored(_digest(3)) == 1
    assert chain.is_stored(_digest(3))
    chain.advance_block(100)
    assert chain.get_stored(_digest(3)) == 1  # immutable after storage


def test_is_stored_definitional():
    chain = SimChain()
    rng = random.Random(4)
    for i in range(50):
        digest = rng.randbytes(32)
        if i % 2 == 0:
            chain.store(digest)
        assert chain.is_stored(digest) == (chain.get_stored(digest) > 0)


def test_write_once_under_interleaving():
    chain = SimChain()
    digest = _digest(5)
    blocks = []
    for _ in range(5):
        blocks.append(chain.store(digest).block_number)
        chain.advance_block(3)
    assert blocks == [1] * 5


def test_malformed_digest_rejected():
    chain = SimChain()
    with pytest.raises(ValueError):
        chain.store(b"short")
    with pytest.raises(ValueError):
        chain.get_stored(b"\x00" * 31)


def test_plausibility_window():
    chain = SimChain()
    bpe = 144
    # epoch 2 spans blocks [289, 432]; land in the middle of it
    chain.advance_block(350)
    digest = _digest(6)
    chain.store(digest)  # stored at block 351
    assert chain.plausibility_window(digest, expected_epoch=2, blocks_per_epoch=bpe)
    assert chain.plausibility_window(digest, expected_epoch=1, blocks_per_epoch=bpe)  # +-1 slack
    assert chain.plausibility_window(digest, expected_epoch=3, blocks_per_epoch=bpe)
    assert not chain.plausibility_window(digest, expected_epoch=5, blocks_per_epoch=bpe)
    assert not chain.plausibility_window(digest, expected_epoch=0, blocks_per_epoch=bpe)
    assert chain.plausibility_window(digest, expected_epoch=0, blocks_per_epoch=bpe, slack_epochs=2)


def test_plausibility_window_boundaries_inclusive():
    chain = SimChain()
    bpe = 10
    digest = _digest(7)
    chain.advance_block(39)  # block 40 = top of epoch 3's span [31, 40]
    chain.store(digest)
    # with slack 1, epoch 2's window is [21, 40]: the boundary block passes
    assert chain.plausibility_window(digest, expected_epoch=2, blocks_per_epoch=bpe)
    assert not chain.plausibility_window(digest, expected_epoch=1, blocks_per_epoch=bpe)


def test_plausibility_requires_storage():
    chain = SimChain()
    with pytest.raises(DigestNotStoredError):
        chain.plausibility_window(_digest(8), 0, 144)
    with pytest.raises(ValueError):
        chain.store(_digest(8))
        chain.plausibility_window(_digest(8), 0, 0)


def test_three_epochs_late_is_rejected():
    chain = SimChain()
    bpe = 144
    digest = _digest(9)
    chain.advance_block(5 * bpe)  # epoch 5's span
    chain.store(digest)
    assert not chain.plausibility_window(digest, expected_epoch=2, blocks_per_epoch=bpe)


def test_monotone_storage_blocks_across_epochs():
    chain = SimChain()
    rng = random.Random(10)
    last = 0
    for _ in range(20):
        receipt = chain.store(rng.randbytes(32))
        assert receipt.block_number >= last
        last = receipt.block_number
        chain.advance_block(rng.randrange(1, 50))


def test_export_round_trip():
    chain = SimChain()
    rng = random.Random(11)
    for _ in range(10):
        chain.store(rng.randbytes(32))
        chain.advance_block(7)
    state = json.loads(chain.to_json())
    clone = SimChain.from_state(state)
    assert clone.block_number == chain.block_number
    for digest_hex, block in state["digests"].items():
        assert clone.get_stored(bytes.fromhex(digest_hex)) == block
    assert clone.export_state() == chain.export_state()
