"""Ledger state machine: blocks, transactions, demurrage token accounts.

State transitions are pure: :func:`apply_block` never mutates its input and
returns a fresh :class:`ChainState`. Token balances are kept as lots that
expire a fixed number of epochs after minting.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from . import pow as pw
from .encoding import ZERO_DIGEST, blob, canonical_json, sha256, text, u32, u64
from .errors import EmptyInput, InsufficientBalance, InvalidBlock, InvalidLinkage, InvalidProof


class TxKind(str, Enum):
    JOIN = "Join"
    EPOCH_REPORT = "EpochReport"
    DATA_EXCHANGE = "DataExchange"
    STAMP_VALIDATION = "StampValidation"
    NEGATIVE_RECEIPT = "NegativeReceipt"


@dataclass
class ChainConfig:
    genesis_mode: str = "longevous"
    min_live_nodes: int = 2
    infrastructure_nodes: tuple = ()
    demurrage_window: int = 5
    epoch_allowance: int = 1_000_000
    penalty_factor: float = 0.5
    pow_difficulty_bits: int = 20
    pow_timeout: float = 10.0
    fee_base: int = 21000
    fee_per_byte: int = 34
    alpha: float = 1.0
    beta: float = 1.0
    stamp_tolerance: float = 0.25
    window_min_proofs: int = 5
    accept_simulated_proofs: bool = False

    def __post_init__(self):
        if self.genesis_mode not in ("longevous", "ad_hoc"):
            raise ValueError(f"genesis_mode must be longevous or ad_hoc, got {self.genesis_mode!r}")
        self.infrastructure_nodes = tuple(self.infrastructure_nodes)
        positive = ("min_live_nodes", "demurrage_window", "epoch_allowance", "pow_timeout", "fee_base",
                    "fee_per_byte", "stamp_tolerance", "window_min_proofs")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.pow_difficulty_bits < 0:
            raise ValueError("pow_difficulty_bits must be >= 0")
        if not 0 <= self.penalty_factor <= 1:
            raise ValueError("penalty_factor must be in [0, 1]")
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ValueError("alpha and beta must be >= 0 and not both zero")

    @property
    def min_partial_bits(self) -> int:
        return pw.min_partial_bits(self.pow_difficulty_bits)


def fee_for_payload(payload_size: int, config: ChainConfig | None = None) -> int:
    if payload_size < 0:
        raise ValueError("payload_size must be >= 0")
    if config is None:
        return 21000 + 34 * payload_size
    return config.fee_base + config.fee_per_byte * payload_size


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    sender: str
    payload: Mapping = field(default_factory=dict)
    payload_size: int = 0
    fee: int = 0

    def serialize(self) -> bytes:
        return (text(TxKind(self.kind).value) + text(self.sender) + blob(canonical_json(self.payload))
                + u64(self.payload_size) + u64(self.fee))

    def to_dict(self) -> dict:
        return {"kind": TxKind(self.kind).value, "sender": self.sender, "payload": self.payload,
                "payload_size": self.payload_size, "fee": self.fee}

    @classmethod
    def from_dict(cls, d) -> "Transaction":
        return cls(TxKind(d["kind"]), d["sender"], d["payload"], int(d["payload_size"]), int(d["fee"]))


@dataclass(frozen=True)
class Block:
    height: int
    parent_digest: bytes
    epoch: int
    validator_id: str
    transactions: tuple = ()
    digest: bytes = b""

    def serialize(self) -> bytes:
        out = [u64(self.height), blob(self.parent_digest), u64(self.epoch), text(self.validator_id),
               u32(len(self.transactions))]
        out += [blob(tx.serialize()) for tx in self.transactions]
        return b"".join(out)

    def compute_digest(self) -> bytes:
        return sha256(self.serialize())

    def to_record(self) -> dict:
        return {"height": self.height, "epoch": self.epoch, "parent": self.parent_digest.hex(),
                "digest": self.digest.hex(), "validator": self.validator_id,
                "txs": [tx.to_dict() for tx in self.transactions]}

    @classmethod
    def from_record(cls, r) -> "Block":
        return cls(int(r["height"]), bytes.fromhex(r["parent"]), int(r["epoch"]), r["validator"],
                   tuple(Transaction.from_dict(t) for t in r["txs"]), bytes.fromhex(r["digest"]))


def make_block(height, parent_digest, epoch, validator_id, transactions=()) -> Block:
    b = Block(height, bytes(parent_digest), epoch, validator_id, tuple(transactions))
    return replace(b, digest=b.compute_digest())


@dataclass(frozen=True)
class Lot:
    minted_epoch: int
    amount: int


@dataclass(frozen=True)
class TokenAccount:
    node_id: str
    lots: tuple = ()

    def spendable(self, current_epoch: int, window: int) -> int:
        return sum(l.amount for l in self.lots if current_epoch - l.minted_epoch < window)

    def spend(self, amount: int, current_epoch: int, window: int) -> tuple["TokenAccount", list]:
        """Consume ``amount`` oldest-usable-first. Returns (account, [(lot epoch, taken)])."""
        if self.spendable(current_epoch, window) < amount:
            raise InsufficientBalance(f"{self.node_id} cannot pay {amount}")
        remaining = amount
        lots, taken = [], []
        for lot in sorted(self.lots, key=lambda l: l.minted_epoch):
            usable = current_epoch - lot.minted_epoch < window
            if remaining and usable and lot.amount:
                t = min(lot.amount, remaining)
                remaining -= t
                taken.append((lot.minted_epoch, t))
                lot = Lot(lot.minted_epoch, lot.amount - t)
            if lot.amount:
                lots.append(lot)
        return TokenAccount(self.node_id, tuple(lots)), taken


def apply_demurrage(accounts: Mapping[str, TokenAccount], current_epoch: int, window: int) -> dict:
    """Drop every lot whose age has reached ``window`` epochs."""
    return {
        nid: TokenAccount(nid, tuple(l for l in acc.lots if current_epoch - l.minted_epoch < window))
        for nid, acc in accounts.items()
    }


def mint_epoch_allowance(accounts, epoch, contributing_nodes, penalized_nodes, allowance, penalty_factor=0.5) -> dict:
    """Credit a fresh lot to each contributor; penalized ones get the reduced share."""
    out = dict(accounts)
    penalized = set(penalized_nodes)
    for nid in sorted(set(contributing_nodes)):
        amount = int(allowance * penalty_factor) if nid in penalized else int(allowance)
        acc = out.get(nid, TokenAccount(nid))
        if amount > 0:
            merged = [l for l in acc.lots if l.minted_epoch != epoch]
            existing = sum(l.amount for l in acc.lots if l.minted_epoch == epoch)
            merged.append(Lot(epoch, existing + amount))
            acc = TokenAccount(nid, tuple(sorted(merged, key=lambda l: l.minted_epoch)))
        out[nid] = acc
    return out


@dataclass(frozen=True)
class ChainState:
    height: int
    tip: bytes
    epoch: int
    accounts: Mapping = field(default_factory=dict)
    admitted: frozenset = frozenset()
    stamps: Mapping = field(default_factory=dict)          # exchange sample digest -> (provider, epoch)
    report_stamps: Mapping = field(default_factory=dict)   # epoch-report stamp digest -> (producer, epoch)
    reports: Mapping = field(default_factory=dict)         # node -> last reported epoch
    validation_count: int = 0
    receipt_count: int = 0

    def balance(self, node_id: str, window: int) -> int:
        acc = self.accounts.get(node_id)
        return acc.spendable(self.epoch, window) if acc else 0

    def total_spendable(self, window: int) -> int:
        return sum(acc.spendable(self.epoch, window) for acc in self.accounts.values())

    def serialize(self) -> bytes:
        out = [u64(self.height), blob(self.tip), u64(self.epoch), u32(len(self.accounts))]
        for nid in sorted(self.accounts):
            lots = self.accounts[nid].lots
            out.append(text(nid) + u32(len(lots)) + b"".join(u64(l.minted_epoch) + u64(l.amount) for l in lots))
        out.append(u32(len(self.admitted)) + b"".join(text(n) for n in sorted(self.admitted)))
        for table in (self.stamps, self.report_stamps):
            out.append(u32(len(table)))
            for dg in sorted(table):
                who, ep = table[dg]
                out.append(text(dg) + text(who) + u64(ep))
        out.append(u32(len(self.reports)) + b"".join(text(n) + u64(self.reports[n]) for n in sorted(self.reports)))
        out.append(u64(self.validation_count) + u64(self.receipt_count))
        return b"".join(out)

    def digest(self) -> str:
        return sha256(self.serialize()).hex()


def genesis(config: ChainConfig) -> tuple[Block, ChainState]:
    block = make_block(0, ZERO_DIGEST, 0, "genesis", ())
    admitted = frozenset(config.infrastructure_nodes) if config.genesis_mode == "longevous" else frozenset()
    accounts = {n: TokenAccount(n) for n in sorted(admitted)}
    return block, ChainState(0, block.digest, 0, accounts, admitted)


def _check_proof(tx: Transaction, parent: bytes, config: ChainConfig, need_full: bool):
    try:
        proof = pw.Proof.from_dict(tx.payload["proof"])
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidProof(f"{tx.kind.value} from {tx.sender} has no readable proof") from e
    puzzle = pw.derive_puzzle(tx.sender, parent, config.pow_difficulty_bits)
    if proof.simulated:
        if not config.accept_simulated_proofs:
            raise InvalidProof("simulated proofs are not accepted by this chain")
    elif pw.verify(puzzle, proof.nonce) != proof.achieved_bits:
        raise InvalidProof(f"proof from {tx.sender} does not verify")
    if proof.is_full != (proof.achieved_bits >= config.pow_difficulty_bits):
        raise InvalidProof("is_full flag inconsistent with achieved bits")
    if need_full and not proof.is_full:
        raise InvalidProof(f"join proof from {tx.sender} is not a full proof")
    if proof.achieved_bits < config.min_partial_bits:
        raise InvalidProof(f"proof from {tx.sender} below minimum partial difficulty")
    shares = tx.payload.get("shares")
    if shares is not None and not proof.simulated:
        s = int(tx.payload.get("share_bits", config.min_partial_bits))
        if len(set(shares)) != len(shares) or int(tx.payload.get("share_count", -1)) != len(shares):
            raise InvalidProof("share list does not match share count")
        if any(pw.verify(puzzle, int(n)) < s for n in shares):
            raise InvalidProof("a share does not reach the share difficulty")
    return proof


def validate_block(state: ChainState, block: Block, config: ChainConfig):
    if block.height != state.height + 1:
        raise InvalidLinkage(f"expected height {state.height + 1}, got {block.height}")
    if block.parent_digest != state.tip:
        raise InvalidLinkage("parent digest does not match the current tip")
    if block.compute_digest() != block.digest:
        raise InvalidBlock("block digest does not match its contents")
    if block.epoch < state.epoch:
        raise InvalidBlock("epoch went backwards")
    for tx in block.transactions:
        if tx.kind == TxKind.DATA_EXCHANGE:
            if tx.fee != fee_for_payload(tx.payload_size, config):
                raise InvalidBlock(f"fee {tx.fee} off schedule for {tx.payload_size} bytes")
        elif tx.fee != 0:
            raise InvalidBlock(f"{tx.kind.value} transactions carry no fee")


def apply_block(state: ChainState, block: Block, config: ChainConfig) -> ChainState:
    """Validate ``block`` against ``state`` and return the successor state.

    Order inside a block: demurrage at the block epoch, transactions in
    order, then allowance minting for every sender of a verified epoch
    report. Any bad transaction rejects the whole block.
    """
    validate_block(state, block, config)
    epoch = block.epoch
    window = config.demurrage_window
    accounts = apply_demurrage(state.accounts, epoch, window)
    admitted = set(state.admitted)
    stamps = dict(state.stamps)
    report_stamps = dict(state.report_stamps)
    reports = dict(state.reports)
    validations, receipts = state.validation_count, state.receipt_count
    contributors, penalized = [], set()

    for tx in block.transactions:
        kind = TxKind(tx.kind)
        if kind == TxKind.JOIN:
            if tx.sender in admitted:
                raise InvalidBlock(f"{tx.sender} already admitted")
            _check_proof(tx, block.parent_digest, config, need_full=True)
            admitted.add(tx.sender)
            accounts.setdefault(tx.sender, TokenAccount(tx.sender))
            continue
        if tx.sender not in admitted:
            raise InvalidBlock(f"{tx.sender} is not admitted")
        if kind == TxKind.EPOCH_REPORT:
            if reports.get(tx.sender) == epoch:
                raise InvalidBlock(f"second epoch report from {tx.sender}")
            _check_proof(tx, block.parent_digest, config, need_full=False)
            reports[tx.sender] = epoch
            contributors.append(tx.sender)
            stamp_digests = tx.payload.get("stamps", [])
            for dg in stamp_digests:
                report_stamps[dg] = (tx.sender, epoch)
            if not stamp_digests:
                penalized.add(tx.sender)
        elif kind == TxKind.DATA_EXCHANGE:
            acc, _ = accounts.get(tx.sender, TokenAccount(tx.sender)).spend(tx.fee, epoch, window)
            accounts[tx.sender] = acc
            stamps.setdefault(tx.payload["stamp_digest"], (tx.sender, epoch))
        elif kind == TxKind.STAMP_VALIDATION:
            validations += 1
            if tx.payload.get("final") and tx.payload.get("outcome") == "Mismatch":
                penalized.add(tx.payload["producer"])
        elif kind == TxKind.NEGATIVE_RECEIPT:
            receipts += 1
            penalized.add(tx.payload["producer"])

    if config.genesis_mode == "longevous":
        contributors = [c for c in contributors if c not in config.infrastructure_nodes]
    accounts = mint_epoch_allowance(accounts, epoch, contributors, penalized,
                                    config.epoch_allowance, config.penalty_factor)
    return ChainState(block.height, block.digest, epoch, accounts, frozenset(admitted), stamps,
                      report_stamps, reports, validations, receipts)


def replay(blocks: Sequence[Block], config: ChainConfig) -> ChainState:
    """Apply ``blocks[1:]`` on top of the genesis state for ``config``."""
    g, state = genesis(config)
    if not blocks or blocks[0].digest != g.digest:
        raise InvalidLinkage("chain does not start at this config's genesis")
    for b in blocks[1:]:
        state = apply_block(state, b, config)
    return state


def select_canonical(branches: Iterable[Sequence[Block]]) -> Sequence[Block]:
    """Longest branch wins; equal heights go to the smaller tip digest."""
    branches = [b for b in branches if b]
    if not branches:
        raise EmptyInput("no branches to choose from")
    roots = {b[0].digest for b in branches}
    if len(roots) != 1:
        raise InvalidLinkage("branches do not share a genesis block")
    return min(branches, key=lambda b: (-b[-1].height, b[-1].digest))


def registered_exchange_digests(chain: Sequence[Block]) -> set:
    return {
        tx.payload["stamp_digest"]
        for b in chain
        for tx in b.transactions
        if TxKind(tx.kind) == TxKind.DATA_EXCHANGE
    }


def export_snapshot(chain: Sequence[Block]) -> str:
    return "".join(json.dumps(b.to_record(), sort_keys=True, separators=(",", ":")) + "\n" for b in chain)


def load_snapshot(lines: str) -> list:
    blocks = [Block.from_record(json.loads(l)) for l in lines.splitlines() if l.strip()]
    for b in blocks:
        if b.compute_digest() != b.digest:
            raise InvalidBlock(f"block {b.height} digest mismatch in snapshot")
    return blocks
