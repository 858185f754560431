"""Small builders shared by the test modules."""
from swarmchain import chain as ch
from swarmchain import pow as pw


def zero_difficulty_config(**kw):
    kw.setdefault("pow_difficulty_bits", 0)
    return ch.ChainConfig(**kw)


def live_proof(node, parent, config):
    puzzle = pw.derive_puzzle(node, parent, config.pow_difficulty_bits)
    budget = max(1, 2 ** (config.pow_difficulty_bits + 6))
    return pw.solve(puzzle, budget, float(budget), 1.0)


def join_tx(node, parent, config):
    return ch.Transaction(ch.TxKind.JOIN, node, {"proof": live_proof(node, parent, config).to_dict()})


def report_tx(node, parent, config, stamps=("s",)):
    proof = live_proof(node, parent, config)
    return ch.Transaction(ch.TxKind.EPOCH_REPORT, node, {"proof": proof.to_dict(), "stamps": list(stamps)})


def exchange_tx(node, digest, size, config):
    return ch.Transaction(ch.TxKind.DATA_EXCHANGE, node, {"stamp_digest": digest, "recipients": ["x"], "size": size},
                          size, ch.fee_for_payload(size, config))


def extend(chain_blocks, state, config, txs_for_parent, epoch=None, validator="v"):
    """Append one block whose transactions are built from the current tip."""
    txs = txs_for_parent(state.tip)
    epoch = state.epoch + 1 if epoch is None else epoch
    block = ch.make_block(state.height + 1, state.tip, epoch, validator, txs)
    return chain_blocks + [block], ch.apply_block(state, block, config)


# acceptance results, printed in the terminal summary by conftest
ACCEPTANCE = []


def record(number, title, ok, detail=""):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE.append((number, line))
    print(line)
    return ok
