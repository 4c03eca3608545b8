"""Per-round annotation budgets: geometric human decay, flat LLM splits, termination.

The human schedule halves each round (ceil) and folds any residual into the
last round so the list sums exactly to the budget; each round is additionally
capped by what is still unallocated, which keeps every entry non-negative for
degenerate (tiny budget, many rounds) inputs. With 200 over 5 rounds this
yields [100, 50, 25, 13, 12].
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class Termination(enum.Enum):
    CONTINUE = "continue"
    BUDGET_EXHAUSTED = "budget_exhausted"
    COMPUTE_EXHAUSTED = "compute_exhausted"


@dataclass(frozen=True, slots=True)
class BudgetConfig:
    total: int
    human: int
    llm: int
    rounds: int
    warmstart: int = 0
    max_finetune_rounds: int | None = None  # None: cap equals `rounds`

    def __post_init__(self) -> None:
        if self.total != self.human + self.llm:
            raise ValueError(
                f"total budget must equal human + llm ({self.total} != {self.human} + {self.llm})"
            )
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if min(self.total, self.human, self.llm, self.warmstart) < 0:
            raise ValueError("budgets and warmstart must be >= 0")
        if self.max_finetune_rounds is not None and self.max_finetune_rounds < 0:
            raise ValueError("max_finetune_rounds must be >= 0")

    @property
    def finetune_cap(self) -> int:
        return self.rounds if self.max_finetune_rounds is None else self.max_finetune_rounds


def human_schedule(budget: int, rounds: int) -> list[int]:
    """Geometric decay: round r gets ceil(budget / 2^r), last round the residual."""
    if budget < 0 or rounds < 1:
        raise ValueError("need budget >= 0 and rounds >= 1")
    out: list[int] = []
    remaining = budget
    for r in range(1, rounds):
        take = min(math.ceil(budget / 2**r), remaining)
        out.append(take)
        remaining -= take
    out.append(remaining)
    return out


def flat_schedule(budget: int, rounds: int) -> list[int]:
    """Constant per-round split: floor(budget / rounds), remainder in the last round."""
    if budget < 0 or rounds < 1:
        raise ValueError("need budget >= 0 and rounds >= 1")
    base = budget // rounds
    out = [base] * rounds
    out[-1] = budget - base * (rounds - 1)
    return out


def llm_schedule(budget: int, rounds: int) -> list[int]:
    return flat_schedule(budget, rounds)


def cumulative(human: list[int], llm: list[int]) -> list[int]:
    if len(human) != len(llm):
        raise ValueError("schedules must have the same number of rounds")
    out: list[int] = []
    total = 0
    for h, g in zip(human, llm):
        total += h + g
        out.append(total)
    return out


@dataclass
class BudgetLedger:
    """Mutable per-run accounting. Single writer; readers copy."""

    config: BudgetConfig
    human_sched: list[int]
    llm_sched: list[int]
    spent_human: int = 0
    spent_llm: int = 0
    rounds_run: int = 0
    # budget unspent due to annotation failures, granted to the next round's LLM slot
    llm_rollover: int = 0
    # how much of spent_llm was covered by rolled-over human budget
    llm_bonus: int = 0

    @classmethod
    def from_config(cls, config: BudgetConfig, human_mode: str = "variable") -> "BudgetLedger":
        if human_mode == "variable":
            hs = human_schedule(config.human, config.rounds)
        elif human_mode == "equal":
            hs = flat_schedule(config.human, config.rounds)
        else:
            raise ValueError(f"unknown human batch mode {human_mode!r}")
        return cls(config=config, human_sched=hs, llm_sched=llm_schedule(config.llm, config.rounds))

    def allocation(self, rnd: int) -> tuple[int, int]:
        """(human, llm) allocation for 1-indexed round, rollover included."""
        if not 1 <= rnd <= self.config.rounds:
            raise ValueError(f"round {rnd} outside 1..{self.config.rounds}")
        return self.human_sched[rnd - 1], self.llm_sched[rnd - 1] + self.llm_rollover

    def charge(self, human: int, llm: int, human_from_rollover: int = 0) -> None:
        self.spent_human += human
        self.spent_llm += llm
        self.llm_bonus += human_from_rollover
        self.check()

    def check(self) -> None:
        if self.spent_human > self.config.human:
            raise ValueError(f"human budget exceeded: {self.spent_human} > {self.config.human}")
        if self.spent_llm > self.config.llm + self.llm_bonus:
            raise ValueError(
                f"llm budget exceeded: {self.spent_llm} > {self.config.llm} + rollover {self.llm_bonus}"
            )
        if self.spent_human + self.spent_llm > self.config.total:
            raise ValueError("total budget exceeded")

    def to_dict(self) -> dict:
        return {
            "human_sched": list(self.human_sched),
            "llm_sched": list(self.llm_sched),
            "spent_human": self.spent_human,
            "spent_llm": self.spent_llm,
            "rounds_run": self.rounds_run,
            "llm_rollover": self.llm_rollover,
            "llm_bonus": self.llm_bonus,
        }


def should_terminate(ledger: BudgetLedger) -> Termination:
    """Budget exhaustion wins over the compute cap when both hold."""
    if ledger.spent_human + ledger.spent_llm >= ledger.config.total:
        return Termination.BUDGET_EXHAUSTED
    if ledger.rounds_run >= ledger.config.finetune_cap:
        return Termination.COMPUTE_EXHAUSTED
    return Termination.CONTINUE
