import pytest
from hypothesis import given, strategies as st

from swarmchain import chain as ch
from swarmchain import pow as pw
from swarmchain.allocation import admit_forward
from swarmchain.encoding import ZERO_DIGEST
from swarmchain.errors import EmptyInput, InsufficientBalance, InvalidBlock, InvalidLinkage, InvalidProof

from helpers import exchange_tx, extend, join_tx, report_tx, zero_difficulty_config

TABLE3 = [(20, 21680), (1080, 57720), (2160, 94440), (4320, 167880), (8640, 314760)]


@pytest.mark.parametrize("size,fee", TABLE3 + [(0, 21000)])
def test_fee_schedule(size, fee):
    assert ch.fee_for_payload(size) == fee
    assert ch.fee_for_payload(size, ch.ChainConfig()) == fee


@given(st.integers(0, 10**7), st.integers(0, 10**7))
def test_fee_linearity(a, b):
    cfg = ch.ChainConfig()
    assert ch.fee_for_payload(a + b) == ch.fee_for_payload(a) + cfg.fee_per_byte * b


def test_negative_payload_rejected():
    with pytest.raises(ValueError):
        ch.fee_for_payload(-1)


@pytest.mark.parametrize("field,value", [("demurrage_window", 0), ("pow_difficulty_bits", -1), ("alpha", -1),
                                         ("genesis_mode", "forever"), ("fee_base", 0)])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        ch.ChainConfig(**{field: value})


def test_config_rejects_both_weights_zero():
    with pytest.raises(ValueError):
        ch.ChainConfig(alpha=0, beta=0)


def test_genesis_shape():
    g, state = ch.genesis(ch.ChainConfig())
    assert g.height == 0 and g.parent_digest == ZERO_DIGEST
    assert g.digest == g.compute_digest()
    assert state.height == 0 and state.tip == g.digest
    assert len(state.digest()) == 64


def test_empty_block_advances_height():
    cfg = ch.ChainConfig()
    g, s0 = ch.genesis(cfg)
    s1 = ch.apply_block(s0, ch.make_block(1, g.digest, 1, "v"), cfg)
    assert s1.height == 1 and s1.epoch == 1
    assert s0.height == 0  # input untouched


def test_block_digest_covers_body():
    cfg = ch.ChainConfig()
    g, s0 = ch.genesis(cfg)
    b = ch.make_block(1, g.digest, 1, "v", [ch.Transaction(ch.TxKind.JOIN, "a", {"proof": {}})])
    tampered = ch.Block(b.height, b.parent_digest, b.epoch, "w", b.transactions, b.digest)
    with pytest.raises(InvalidBlock):
        ch.apply_block(s0, tampered, cfg)


def test_linkage_errors():
    cfg = ch.ChainConfig()
    g, s0 = ch.genesis(cfg)
    with pytest.raises(InvalidLinkage):
        ch.apply_block(s0, ch.make_block(2, g.digest, 1, "v"), cfg)
    with pytest.raises(InvalidLinkage):
        ch.apply_block(s0, ch.make_block(1, bytes(32), 1, "v"), cfg)


def test_join_creates_empty_account():
    cfg = zero_difficulty_config(pow_difficulty_bits=6)
    g, s0 = ch.genesis(cfg)
    _, s1 = extend([g], s0, cfg, lambda tip: [join_tx("a", tip, cfg)])
    assert "a" in s1.admitted
    assert s1.accounts["a"].lots == ()


def test_join_replay_digest_fixture():
    # replaying the same join twice from genesis yields the same state digest
    cfg = zero_difficulty_config(pow_difficulty_bits=6)
    g, s0 = ch.genesis(cfg)
    blocks, s1 = extend([g], s0, cfg, lambda tip: [join_tx("a", tip, cfg), join_tx("b", tip, cfg)])
    assert ch.replay(blocks, cfg).digest() == s1.digest()
    assert ch.replay(blocks, cfg).digest() == ch.replay(list(blocks), cfg).digest()


def test_join_with_bad_nonce_rejected():
    cfg = zero_difficulty_config(pow_difficulty_bits=10)
    g, s0 = ch.genesis(cfg)
    tx = join_tx("a", g.digest, cfg)
    proof = dict(tx.payload["proof"])
    proof["nonce"] += 1
    bad = ch.Transaction(ch.TxKind.JOIN, "a", {"proof": proof})
    with pytest.raises(InvalidProof):
        ch.apply_block(s0, ch.make_block(1, g.digest, 1, "v", [bad]), cfg)


def test_simulated_proof_needs_opt_in():
    cfg = ch.ChainConfig(pow_difficulty_bits=4)
    g, s0 = ch.genesis(cfg)
    proof = pw.Proof(123, 5, 40, 1.0, True, simulated=True)
    tx = ch.Transaction(ch.TxKind.JOIN, "a", {"proof": proof.to_dict()})
    block = ch.make_block(1, g.digest, 1, "v", [tx])
    with pytest.raises(InvalidProof):
        ch.apply_block(s0, block, cfg)
    cfg_sim = ch.ChainConfig(pow_difficulty_bits=4, accept_simulated_proofs=True)
    assert "a" in ch.apply_block(s0, block, cfg_sim).admitted


def test_partial_join_rejected():
    cfg = zero_difficulty_config(pow_difficulty_bits=30)
    g, s0 = ch.genesis(cfg)
    puzzle = pw.derive_puzzle("a", g.digest, 30)
    proof = pw.solve(puzzle, 2000, 1e9, 1.0, min_partial=0)
    assert not proof.is_full
    tx = ch.Transaction(ch.TxKind.JOIN, "a", {"proof": proof.to_dict()})
    with pytest.raises(InvalidProof):
        ch.apply_block(s0, ch.make_block(1, g.digest, 1, "v", [tx]), cfg)


def test_unadmitted_sender_rejected():
    cfg = zero_difficulty_config()
    g, s0 = ch.genesis(cfg)
    with pytest.raises(InvalidBlock):
        extend([g], s0, cfg, lambda tip: [report_tx("a", tip, cfg)])


def test_report_mints_allowance_and_penalty():
    cfg = zero_difficulty_config(epoch_allowance=100)
    g, s0 = ch.genesis(cfg)
    blocks, s1 = extend([g], s0, cfg, lambda tip: [join_tx("a", tip, cfg), join_tx("b", tip, cfg),
                                                   join_tx("c", tip, cfg)])
    blocks, s2 = extend(blocks, s1, cfg, lambda tip: [report_tx("a", tip, cfg), report_tx("b", tip, cfg, stamps=())])
    assert s2.accounts["a"].lots == (ch.Lot(2, 100),)
    assert s2.accounts["b"].lots == (ch.Lot(2, 50),)  # no stamps: penalized
    assert s2.accounts["c"].lots == ()                # no proof, no lot


def test_negative_receipt_penalizes_producer():
    cfg = zero_difficulty_config(epoch_allowance=100)
    g, s0 = ch.genesis(cfg)
    blocks, s1 = extend([g], s0, cfg, lambda tip: [join_tx("a", tip, cfg), join_tx("b", tip, cfg)])
    receipt = ch.Transaction(ch.TxKind.NEGATIVE_RECEIPT, "b", {"producer": "a", "stamp_digest": "d"})
    _, s2 = extend(blocks, s1, cfg, lambda tip: [report_tx("a", tip, cfg), receipt])
    assert s2.accounts["a"].lots == (ch.Lot(2, 50),)
    assert s2.receipt_count == 1


def test_second_report_in_epoch_rejected():
    cfg = zero_difficulty_config()
    g, s0 = ch.genesis(cfg)
    blocks, s1 = extend([g], s0, cfg, lambda tip: [join_tx("a", tip, cfg)])
    with pytest.raises(InvalidBlock):
        extend(blocks, s1, cfg, lambda tip: [report_tx("a", tip, cfg), report_tx("a", tip, cfg)])


def _funded(cfg, allowance_epochs=1):
    g, s0 = ch.genesis(cfg)
    blocks, s = extend([g], s0, cfg, lambda tip: [join_tx("a", tip, cfg)])
    for _ in range(allowance_epochs):
        blocks, s = extend(blocks, s, cfg, lambda tip: [report_tx("a", tip, cfg)])
    return blocks, s


def test_exchange_fee_paid_and_registered():
    cfg = zero_difficulty_config()
    blocks, s = _funded(cfg)
    blocks, s2 = extend(blocks, s, cfg, lambda tip: [exchange_tx("a", "ab" * 32, 1080, cfg)])
    assert s2.balance("a", cfg.demurrage_window) == cfg.epoch_allowance - 57720
    assert "ab" * 32 in s2.stamps
    assert admit_forward(blocks, "ab" * 32)
    assert not admit_forward(blocks, "cd" * 32)


def test_exchange_with_wrong_fee_is_invalid():
    cfg = zero_difficulty_config()
    blocks, s = _funded(cfg)
    tx = ch.Transaction(ch.TxKind.DATA_EXCHANGE, "a", {"stamp_digest": "x", "recipients": [], "size": 1}, 20, 21679)
    with pytest.raises(InvalidBlock):
        ch.apply_block(s, ch.make_block(s.height + 1, s.tip, s.epoch + 1, "v", [tx]), cfg)


def test_exchange_without_funds():
    cfg = zero_difficulty_config(epoch_allowance=30000)
    blocks, s = _funded(cfg)
    with pytest.raises(InsufficientBalance):
        extend(blocks, s, cfg, lambda tip: [exchange_tx("a", "d", 1080, cfg)])


def test_non_exchange_fee_rejected():
    cfg = zero_difficulty_config()
    g, s0 = ch.genesis(cfg)
    tx = ch.Transaction(ch.TxKind.JOIN, "a", {"proof": {}}, 0, 5)
    with pytest.raises(InvalidBlock):
        ch.apply_block(s0, ch.make_block(1, g.digest, 1, "v", [tx]), cfg)


# demurrage -------------------------------------------------------------

def test_demurrage_boundary():
    acc = {"a": ch.TokenAccount("a", (ch.Lot(0, 10),))}
    assert ch.apply_demurrage(acc, 5, 5)["a"].lots == ()
    acc = {"a": ch.TokenAccount("a", (ch.Lot(3, 10),))}
    assert ch.apply_demurrage(acc, 5, 5)["a"].lots == (ch.Lot(3, 10),)


@given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 1000)), max_size=12),
       st.integers(0, 50), st.integers(1, 10))
def test_demurrage_removes_exactly_aged_lots(lots, epoch, window):
    lots = [(e, a) for e, a in lots if e <= epoch]
    acc = {"a": ch.TokenAccount("a", tuple(ch.Lot(e, a) for e, a in lots))}
    after = ch.apply_demurrage(acc, epoch, window)["a"]
    aged = sum(a for e, a in lots if epoch - e >= window)
    assert sum(l.amount for l in after.lots) == sum(a for _, a in lots) - aged
    assert all(epoch - l.minted_epoch < window for l in after.lots)


def test_mint_examples():
    out = ch.mint_epoch_allowance({}, 3, ["a"], [], 100)
    assert out["a"].lots == (ch.Lot(3, 100),)
    out = ch.mint_epoch_allowance({}, 3, ["a"], ["a"], 100, 0.5)
    assert out["a"].lots == (ch.Lot(3, 50),)
    assert ch.mint_epoch_allowance({}, 3, [], ["a"], 100) == {}


def test_spend_oldest_first_skips_expired():
    acc = ch.TokenAccount("a", (ch.Lot(1, 5), ch.Lot(3, 10), ch.Lot(4, 10)))
    acc2, taken = acc.spend(12, current_epoch=6, window=5)
    # lot 1 is expired at epoch 6 (age 5) so it is never touched
    assert taken == [(3, 10), (4, 2)]
    assert acc2.lots == (ch.Lot(1, 5), ch.Lot(4, 8))


@given(st.lists(st.integers(1, 100), min_size=1, max_size=6), st.integers(0, 600))
def test_spend_fifo_oracle(amounts, spend):
    lots = tuple(ch.Lot(e, a) for e, a in enumerate(amounts))
    acc = ch.TokenAccount("a", lots)
    epoch, window = len(amounts) - 1, len(amounts)
    if spend > sum(amounts):
        with pytest.raises(InsufficientBalance):
            acc.spend(spend, epoch, window)
        return
    acc2, _ = acc.spend(spend, epoch, window)
    # oracle: walk the amounts from the oldest
    left, expect = spend, []
    for e, a in enumerate(amounts):
        t = min(a, left)
        left -= t
        if a - t:
            expect.append((e, a - t))
    assert [(l.minted_epoch, l.amount) for l in acc2.lots] == expect


# canonical chain ------------------------------------------------------

def _branch(length, tag):
    cfg = ch.ChainConfig()
    g, _ = ch.genesis(cfg)
    blocks = [g]
    for h in range(1, length + 1):
        blocks.append(ch.make_block(h, blocks[-1].digest, h, f"{tag}{h}"))
    return blocks


def test_select_longer():
    a, b = _branch(5, "a"), _branch(3, "b")
    assert ch.select_canonical([a, b]) is a
    assert ch.select_canonical([b, a]) is a


def test_select_tie_by_digest():
    a, b = _branch(4, "a"), _branch(4, "b")
    expect = a if a[-1].digest < b[-1].digest else b
    assert ch.select_canonical([a, b]) is expect
    assert ch.select_canonical([b, a]) is expect


def test_select_errors():
    with pytest.raises(EmptyInput):
        ch.select_canonical([])
    other = [ch.make_block(0, bytes(32), 0, "other")]
    with pytest.raises(InvalidLinkage):
        ch.select_canonical([_branch(1, "a"), other])


@given(st.lists(st.tuples(st.integers(0, 5), st.sampled_from("abcdef")), min_size=1, max_size=6))
def test_select_pairwise_reduction_agrees(specs):
    branches = [_branch(n, t) for n, t in specs]
    whole = ch.select_canonical(branches)
    acc = branches[0]
    for b in branches[1:]:
        acc = ch.select_canonical([acc, b])
    assert acc[-1].digest == whole[-1].digest
    acc = branches[-1]
    for b in reversed(branches[:-1]):
        acc = ch.select_canonical([b, acc])
    assert acc[-1].digest == whole[-1].digest


def test_fork_reorg_and_relay_view():
    """Two producers race from a shared prefix; the longer branch arrives late and wins."""
    cfg = zero_difficulty_config()
    blocks, s = _funded(cfg)
    prefix, s_prefix = blocks, s
    # branch A registers digest "fa" and stays short
    a_blocks, a_state = extend(prefix, s_prefix, cfg, lambda tip: [exchange_tx("a", "fa", 20, cfg)], validator="A")
    # branch B is two blocks longer and registers "fb"
    b_blocks, b_state = extend(prefix, s_prefix, cfg, lambda tip: [exchange_tx("a", "fb", 20, cfg)], validator="B")
    b_blocks, b_state = extend(b_blocks, b_state, cfg, lambda tip: [], validator="B")
    view = [a_blocks]
    assert ch.select_canonical(view) is a_blocks
    view.append(b_blocks)  # late arrival
    canon = ch.select_canonical(view)
    assert canon is b_blocks
    assert ch.replay(canon, cfg).digest() == b_state.digest()
    assert admit_forward(view, "fb")
    assert not admit_forward(view, "fa")  # only on the losing fork


def test_snapshot_roundtrip():
    cfg = zero_difficulty_config()
    blocks, s = _funded(cfg, 2)
    text = ch.export_snapshot(blocks)
    assert all(len(__import__("json").loads(l)["digest"]) == 64 for l in text.splitlines())
    again = ch.load_snapshot(text)
    assert [b.digest for b in again] == [b.digest for b in blocks]
    assert ch.replay(again, cfg).digest() == s.digest()


def test_snapshot_detects_tampering():
    cfg = zero_difficulty_config()
    blocks, _ = _funded(cfg)
    text = ch.export_snapshot(blocks).replace('"validator":"v"', '"validator":"w"', 1)
    with pytest.raises(InvalidBlock):
        ch.load_snapshot(text)


def test_replay_rejects_foreign_genesis():
    with pytest.raises(InvalidLinkage):
        ch.replay([ch.make_block(0, bytes(32), 0, "x")], ch.ChainConfig())
