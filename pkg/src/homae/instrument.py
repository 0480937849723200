"""Call counters used to check that inference never masks or reconstructs."""
from collections import Counter

CALLS: Counter = Counter()


def count(name: str) -> None:
    CALLS[name] += 1


def reset() -> None:
    CALLS.clear()
