import pytest
from hypothesis import given, strategies as st

from pullgossip.bits import MAX_WIDTH, BitString, WidthError, require_same_width


def test_width_bounds():
    BitString(1, 0)
    BitString(64, (1 << 64) - 1)
    with pytest.raises(WidthError):
        BitString(0, 0)
    with pytest.raises(WidthError):
        BitString(65, 0)
    with pytest.raises(WidthError):
        BitString(3, 8)  # needs 4 bits
    with pytest.raises(WidthError):
        BitString(3, -1)


def test_bit_indexing():
    b = BitString(4, 0b1010)
    assert [b.bit(i) for i in range(4)] == [0, 1, 0, 1]
    assert b[3] == 1
    with pytest.raises(IndexError):
        b.bit(4)
    with pytest.raises(IndexError):
        b.bit(-1)


def test_with_bit():
    b = BitString(4, 0b1010)
    assert b.with_bit(0, 1).value == 0b1011
    assert b.with_bit(1, 0).value == 0b1000
    assert b.with_bit(1, 1).value == b.value  # already set
    with pytest.raises(ValueError):
        b.with_bit(0, 2)
    with pytest.raises(IndexError):
        b.with_bit(4, 1)


def test_concat_puts_other_on_top():
    lo = BitString(2, 0b01)
    hi = BitString(3, 0b110)
    c = lo.concat(hi)
    assert c.width == 5
    assert c.value == 0b11001


def test_slice():
    b = BitString(6, 0b110100)
    assert b.slice(2, 5).value == 0b101
    assert b.slice(0, 6) == b
    with pytest.raises(IndexError):
        b.slice(3, 3)
    with pytest.raises(IndexError):
        b.slice(0, 7)


def test_str_is_msb_first():
    assert str(BitString(5, 0b00110)) == "00110"
    assert str(BitString(3, 1)) == "001"


def test_bits_and_iter_are_lsb_first():
    b = BitString(4, 0b0011)
    assert b.bits() == [1, 1, 0, 0]
    assert list(b) == b.bits()


def test_require_same_width():
    a, b = BitString(3, 1), BitString(3, 5)
    assert require_same_width(a, b) == 3
    with pytest.raises(WidthError):
        require_same_width(a, BitString(4, 1))


@given(st.integers(1, MAX_WIDTH), st.data())
def test_slice_concat_roundtrip(width, data):
    value = data.draw(st.integers(0, (1 << width) - 1))
    cut = data.draw(st.integers(1, width)) if width > 1 else 1
    b = BitString(width, value)
    if cut == width:
        assert b.slice(0, cut) == b
        return
    assert b.slice(0, cut).concat(b.slice(cut, width)) == b


@given(st.integers(1, MAX_WIDTH), st.data())
def test_with_bit_reads_back(width, data):
    value = data.draw(st.integers(0, (1 << width) - 1))
    i = data.draw(st.integers(0, width - 1))
    bit = data.draw(st.integers(0, 1))
    b = BitString(width, value).with_bit(i, bit)
    assert b.bit(i) == bit
    for j in range(width):
        if j != i:
            assert b.bit(j) == BitString(width, value).bit(j)
