"""Fixed-width bit strings.

Messages on the wire are tiny (a handful of bits), so a BitString is just a
non-negative int plus an explicit width.  Bit 0 is the least significant bit.
"""
from __future__ import annotations

from dataclasses import dataclass

MAX_WIDTH = 64


class ContractError(ValueError):
    """A caller broke a documented precondition."""


class WidthError(ContractError):
    pass


@dataclass(frozen=True, slots=True)
class BitString:
    """An immutable string of `width` bits stored as an int.

    width must be in [1, 64] and value must fit in `width` bits.  Operations
    that combine two BitStrings require equal widths; there is no implicit
    widening.
    """

    width: int
    value: int

    def __post_init__(self):
        if not 1 <= self.width <= MAX_WIDTH:
            raise WidthError(f"width must be in [1, {MAX_WIDTH}], got {self.width}")
        if not 0 <= self.value < (1 << self.width):
            raise WidthError(
                f"value {self.value} does not fit in {self.width} bits"
            )

    def bit(self, i: int) -> int:
        """Bit at position i, position 0 being the least significant."""
        if not 0 <= i < self.width:
            raise IndexError(f"bit index {i} out of range for width {self.width}")
        return (self.value >> i) & 1

    def __getitem__(self, i: int) -> int:
        return self.bit(i)

    def with_bit(self, i: int, b: int) -> "BitString":
        """A copy with bit i set to b."""
        if b not in (0, 1):
            raise ValueError(f"bit value must be 0 or 1, got {b}")
        if not 0 <= i < self.width:
            raise IndexError(f"bit index {i} out of range for width {self.width}")
        cleared = self.value & ~(1 << i)
        return BitString(self.width, cleared | (b << i))

    def concat(self, other: "BitString") -> "BitString":
        """Concatenation; `other`'s bits land above this one's bits."""
        return BitString(self.width + other.width, self.value | (other.value << self.width))

    def slice(self, lo: int, hi: int) -> "BitString":
        """Bits lo..hi-1 as a new BitString of width hi-lo."""
        if not 0 <= lo < hi <= self.width:
            raise IndexError(f"slice [{lo}, {hi}) out of range for width {self.width}")
        return BitString(hi - lo, (self.value >> lo) & ((1 << (hi - lo)) - 1))

    def bits(self) -> list[int]:
        return [(self.value >> i) & 1 for i in range(self.width)]

    def __iter__(self):
        return iter(self.bits())

    def __str__(self) -> str:
        # most significant bit printed first, like binary literals
        return format(self.value, f"0{self.width}b")


def require_same_width(*xs: BitString) -> int:
    w = xs[0].width
    for x in xs[1:]:
        if x.width != w:
            raise WidthError(f"mixed widths {w} and {x.width}")
    return w
