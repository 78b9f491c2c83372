"""Payment network: accounts, balance-limited transfers and a fee sink.

Amounts are `decimal.Decimal`, so the total over all accounts (fee sink
included) is conserved exactly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import Decimal

FEE_SINK = "fee-sink"


class PaymentError(Exception):
    pass


class InsufficientFunds(PaymentError):
    pass


class UnknownAccount(PaymentError, KeyError):
    pass


def to_decimal(value) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        return Decimal(repr(value))
    return Decimal(value)


@dataclass
class Account:
    id: str
    balance: Decimal = Decimal(0)


@dataclass(frozen=True)
class Transaction:
    from_account: str
    to_account: str
    amount: Decimal
    fee: Decimal = Decimal(0)
    at: float = 0.0
    ref: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "amount", to_decimal(self.amount))
        object.__setattr__(self, "fee", to_decimal(self.fee))
        if self.amount <= 0:
            raise ValueError("amount must be positive")
        if self.fee < 0:
            raise ValueError("fee must be nonnegative")
        if self.from_account == self.to_account:
            raise ValueError("sender and receiver must differ")

    def to_dict(self) -> dict:
        d = {
            "at": self.at,
            "from": self.from_account,
            "to": self.to_account,
            "amount": str(self.amount),
            "fee": str(self.fee),
        }
        if self.ref is not None:
            d["ref"] = self.ref
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Transaction:
        return cls(d["from"], d["to"], Decimal(d["amount"]), Decimal(d.get("fee", "0")), float(d["at"]), d.get("ref"))


@dataclass
class Ledger:
    accounts: dict[str, Account] = field(default_factory=dict)
    fee_sink: str = FEE_SINK
    log: list[Transaction] = field(default_factory=list)

    def __post_init__(self):
        self.accounts.setdefault(self.fee_sink, Account(self.fee_sink))

    @classmethod
    def with_balances(cls, balances: dict, fee_sink: str = FEE_SINK) -> Ledger:
        return cls({k: Account(k, to_decimal(v)) for k, v in balances.items()}, fee_sink)

    def open(self, account_id: str, balance=0) -> Account:
        if account_id in self.accounts:
            raise ValueError(f"account {account_id!r} exists")
        acct = self.accounts[account_id] = Account(account_id, to_decimal(balance))
        return acct

    def balance(self, account_id: str) -> Decimal:
        try:
            return self.accounts[account_id].balance
        except KeyError:
            raise UnknownAccount(account_id) from None

    def balances(self) -> dict[str, Decimal]:
        return {k: a.balance for k, a in self.accounts.items()}

    def total(self) -> Decimal:
        return sum((a.balance for a in self.accounts.values()), Decimal(0))

    def apply(self, tx: Transaction) -> Ledger:
        for acct in (tx.from_account, tx.to_account):
            if acct not in self.accounts:
                raise UnknownAccount(acct)
        sender = self.accounts[tx.from_account]
        debit = tx.amount + tx.fee
        if sender.balance < debit:
            raise InsufficientFunds(f"{tx.from_account} holds {sender.balance}, needs {debit}")
        sender.balance -= debit
        self.accounts[tx.to_account].balance += tx.amount
        self.accounts[self.fee_sink].balance += tx.fee
        self.log.append(tx)
        return self

    def delta(self, tx: Transaction, account_id: str) -> Decimal:
        d = Decimal(0)
        if tx.from_account == account_id:
            d -= tx.amount + tx.fee
        if tx.to_account == account_id:
            d += tx.amount
        if account_id == self.fee_sink:
            d += tx.fee
        return d

    def net_position(self, account_id: str, window: tuple[float, float] | None = None) -> Decimal:
        """Sum of signed balance changes of `account_id` for transactions with start <= at <= end."""
        if account_id not in self.accounts:
            raise UnknownAccount(account_id)
        lo, hi = window if window is not None else (-float("inf"), float("inf"))
        return sum((self.delta(tx, account_id) for tx in self.log if lo <= tx.at <= hi), Decimal(0))

    def flow(self, a: str, b: str) -> Decimal:
        """Net amount transferred a -> b; flow(a, b) == -flow(b, a)."""
        out = Decimal(0)
        for tx in self.log:
            if (tx.from_account, tx.to_account) == (a, b):
                out += tx.amount
            elif (tx.from_account, tx.to_account) == (b, a):
                out -= tx.amount
        return out

    def log_jsonl(self) -> str:
        return "".join(json.dumps(tx.to_dict()) + "\n" for tx in self.log)

    def log_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=LOG_COLUMNS, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        writer.writerows(tx.to_dict() for tx in self.log)
        return buf.getvalue()

    def replay(self, transactions) -> Ledger:
        """Apply transactions in order; stops at the first failing one."""
        for tx in transactions:
            self.apply(tx)
        return self


LOG_COLUMNS = ["at", "from", "to", "amount", "fee"]


def read_log_jsonl(text: str) -> list[Transaction]:
    return [Transaction.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def apply(ledger: Ledger, tx: Transaction) -> Ledger:
    return ledger.apply(tx)


def net_position(ledger: Ledger, account: str, window: tuple[float, float] | None = None) -> Decimal:
    return ledger.net_position(account, window)
