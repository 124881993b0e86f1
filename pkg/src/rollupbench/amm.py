"""Constant-product AMM state machine with Uniswap-V2 integer semantics.

Only what the stress workload needs: pool creation, allowances and 1-hop
exact-input swaps. All amounts are unsigned 128-bit integers.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

MAX_UINT128 = (1 << 128) - 1
MAX_UINT64 = (1 << 64) - 1

FEE_NUMERATOR = 997
FEE_DENOMINATOR = 1000

ROUTER = "router"


class AmmError(Exception):
    """Base class for swap and pool failures."""


class ZeroLiquidity(AmmError):
    pass


class PairExists(AmmError):
    pass


class UnknownPool(AmmError):
    pass


class UnknownAccount(AmmError):
    pass


class InsufficientBalance(AmmError):
    pass


class InsufficientAllowance(AmmError):
    pass


class ZeroInput(AmmError):
    pass


class ZeroReserves(AmmError):
    pass


class Expired(AmmError):
    pass


class InsufficientOutputAmount(AmmError):
    pass


class BadNonce(AmmError):
    pass


class AmountOverflow(AmmError):
    pass


@dataclass
class Account:
    address: str
    balances: Dict[str, int] = field(default_factory=dict)
    # (spender, token) -> amount
    allowances: Dict[Tuple[str, str], int] = field(default_factory=dict)
    nonce: int = 0


@dataclass
class Pool:
    token0: str
    token1: str
    reserve0: int
    reserve1: int

    @property
    def k(self) -> int:
        return self.reserve0 * self.reserve1

    def reserves_for(self, token_in: str) -> Tuple[int, int]:
        if token_in == self.token0:
            return self.reserve0, self.reserve1
        return self.reserve1, self.reserve0


@dataclass(frozen=True)
class SwapTx:
    tx_id: str
    sender: str
    token_in: str
    token_out: str
    amount_in: int
    amount_out_min: int
    deadline: float
    nonce: int

    def __post_init__(self):
        if self.token_in == self.token_out:
            raise ValueError("token_in and token_out must differ")


@dataclass(frozen=True)
class StorageWrite:
    slot: str
    value: int


@dataclass(frozen=True)
class SwapResult:
    amount_out: int
    writes: Tuple[StorageWrite, ...]


def pair_key(token_a: str, token_b: str) -> Tuple[str, str]:
    return (token_a, token_b) if token_a < token_b else (token_b, token_a)


def _check_amount(value: int) -> None:
    if value < 0 or value > MAX_UINT128:
        raise AmountOverflow(f"amount {value} outside uint128")


def get_amount_out(amount_in: int, reserve_in: int, reserve_out: int) -> int:
    """Quote the output of an exact-input swap, 0.3% fee, floor division."""
    if amount_in <= 0:
        raise ZeroInput("amount_in must be positive")
    if reserve_in <= 0 or reserve_out <= 0:
        raise ZeroReserves("pool has no liquidity")
    amount_in_with_fee = amount_in * FEE_NUMERATOR
    numerator = amount_in_with_fee * reserve_out
    denominator = reserve_in * FEE_DENOMINATOR + amount_in_with_fee
    return numerator // denominator


class AmmState:
    """World state: accounts plus pools, mutated only by the simulation loop."""

    def __init__(self):
        self.accounts: Dict[str, Account] = {}
        self.pools: Dict[Tuple[str, str], Pool] = {}

    def open_account(self, address: str) -> Account:
        if address not in self.accounts:
            self.accounts[address] = Account(address)
        return self.accounts[address]

    def account(self, address: str) -> Account:
        try:
            return self.accounts[address]
        except KeyError:
            raise UnknownAccount(address) from None

    def pool(self, token_a: str, token_b: str) -> Pool:
        try:
            return self.pools[pair_key(token_a, token_b)]
        except KeyError:
            raise UnknownPool(f"{token_a}/{token_b}") from None

    def mint(self, address: str, token: str, amount: int) -> None:
        """Credit ``amount`` to an existing account. Additive."""
        acct = self.account(address)
        new = acct.balances.get(token, 0) + amount
        _check_amount(new)
        acct.balances[token] = new

    def snapshot(self) -> "AmmState":
        return copy.deepcopy(self)

    def token_supply(self, token: str) -> int:
        held = sum(a.balances.get(token, 0) for a in self.accounts.values())
        for p in self.pools.values():
            if p.token0 == token:
                held += p.reserve0
            elif p.token1 == token:
                held += p.reserve1
        return held

    def __eq__(self, other):
        if not isinstance(other, AmmState):
            return NotImplemented
        return self.accounts == other.accounts and self.pools == other.pools


def create_pool(state: AmmState, provider: str, token_a: str, token_b: str,
                reserve_a: int, reserve_b: int) -> Pool:
    """Register a pool funded by ``provider``'s balances."""
    if token_a == token_b:
        raise PairExists(f"identical tokens {token_a}")
    if reserve_a <= 0 or reserve_b <= 0:
        raise ZeroLiquidity("both reserves must be positive")
    _check_amount(reserve_a)
    _check_amount(reserve_b)
    key = pair_key(token_a, token_b)
    if key in state.pools:
        raise PairExists(f"{key[0]}/{key[1]}")
    acct = state.account(provider)
    if acct.balances.get(token_a, 0) < reserve_a or acct.balances.get(token_b, 0) < reserve_b:
        raise InsufficientBalance(f"{provider} cannot fund pool")
    acct.balances[token_a] -= reserve_a
    acct.balances[token_b] -= reserve_b
    if key[0] == token_a:
        pool = Pool(token_a, token_b, reserve_a, reserve_b)
    else:
        pool = Pool(token_b, token_a, reserve_b, reserve_a)
    state.pools[key] = pool
    return pool


def approve(state: AmmState, account: str, spender: str, token: str, amount: int) -> None:
    _check_amount(amount)
    acct = state.account(account)
    if amount == 0:
        acct.allowances.pop((spender, token), None)
    else:
        acct.allowances[(spender, token)] = amount


def execute_swap(state: AmmState, tx: SwapTx, now: float) -> SwapResult:
    """Run a 1-hop exact-input swap through the router.

    Every guard is evaluated before any mutation, so a raised AmmError
    leaves ``state`` untouched.
    """
    acct = state.account(tx.sender)
    if tx.nonce != acct.nonce:
        raise BadNonce(f"{tx.tx_id}: nonce {tx.nonce} != {acct.nonce}")
    if tx.deadline < now:
        raise Expired(f"{tx.tx_id}: deadline {tx.deadline} < {now}")
    pool = state.pool(tx.token_in, tx.token_out)
    if acct.allowances.get((ROUTER, tx.token_in), 0) < tx.amount_in:
        raise InsufficientAllowance(tx.tx_id)
    if acct.balances.get(tx.token_in, 0) < tx.amount_in:
        raise InsufficientBalance(tx.tx_id)
    reserve_in, reserve_out = pool.reserves_for(tx.token_in)
    amount_out = get_amount_out(tx.amount_in, reserve_in, reserve_out)
    if amount_out < tx.amount_out_min:
        raise InsufficientOutputAmount(f"{tx.tx_id}: {amount_out} < {tx.amount_out_min}")
    if amount_out >= reserve_out:
        raise ZeroReserves(f"{tx.tx_id}: swap would drain the pool")
    new_reserve_in = reserve_in + tx.amount_in
    _check_amount(new_reserve_in)
    out_balance = acct.balances.get(tx.token_out, 0) + amount_out
    _check_amount(out_balance)

    # all checks passed; mutate
    if tx.token_in == pool.token0:
        pool.reserve0, pool.reserve1 = new_reserve_in, reserve_out - amount_out
    else:
        pool.reserve1, pool.reserve0 = new_reserve_in, reserve_out - amount_out
    acct.balances[tx.token_in] -= tx.amount_in
    acct.balances[tx.token_out] = out_balance
    allowance_key = (ROUTER, tx.token_in)
    acct.allowances[allowance_key] -= tx.amount_in
    acct.nonce += 1

    pool_id = f"{pool.token0}/{pool.token1}"
    writes: List[StorageWrite] = [
        StorageWrite(f"pool:{pool_id}:reserve0", pool.reserve0),
        StorageWrite(f"pool:{pool_id}:reserve1", pool.reserve1),
        StorageWrite(f"acct:{acct.address}:balance:{tx.token_in}", acct.balances[tx.token_in]),
        StorageWrite(f"acct:{acct.address}:balance:{tx.token_out}", acct.balances[tx.token_out]),
        StorageWrite(f"acct:{acct.address}:nonce", acct.nonce),
        StorageWrite(f"acct:{acct.address}:allowance:{ROUTER}:{tx.token_in}",
                     acct.allowances[allowance_key]),
    ]
    return SwapResult(amount_out, tuple(writes))
