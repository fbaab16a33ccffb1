import pytest

from errors import DimensionMismatchError, SystemFormatError
from f2linalg import BitMatrix, BitVec
from system import (
    DecodingSystem, css_split, format_system, gen_repetition, gen_rotated_toric,
    gen_unrotated_toric, generate, parse_system, rotated_translations, toric_translations,
    verify_actions_independent,
)


def test_dimensions(rep5, ut4, rt4, ut35):
    assert (rep5.n_checks, rep5.n_actions, rep5.n_faults) == (4, 1, 5)
    assert (ut4.n_checks, ut4.n_actions, ut4.n_faults) == (16, 2, 32)
    assert (rt4.n_checks, rt4.n_actions, rt4.n_faults) == (8, 2, 16)
    assert ut35.n_faults == 30
    assert rep5.is_uniform and rep5.asymptote == 0.5
    assert ut4.asymptote == 0.75


def test_generator_arguments():
    with pytest.raises(ValueError):
        gen_repetition(4)
    with pytest.raises(ValueError):
        gen_rotated_toric(5)
    with pytest.raises(ValueError):
        generate("surface", d=3)
    assert generate("ut", d1=3, d2=5).n_faults == 30


@pytest.mark.parametrize("make", [lambda: gen_unrotated_toric(4), lambda: gen_unrotated_toric(3, 5),
                                  lambda: gen_rotated_toric(4), lambda: gen_repetition(7)])
def test_actions_are_independent_of_checks(make):
    system = make()
    assert verify_actions_independent(system)


def test_straight_loop_is_logical(ut4):
    horizontal = BitVec.from_support(32, [0 * 16 + x * 4 + 1 for x in range(4)])
    assert ut4.is_logical(horizontal)
    assert not ut4.is_logical(BitVec.from_support(32, [0, 1]))


def test_translations_preserve_checks(ut4, rt4):
    for system, perms in ((ut4, toric_translations(4)), (rt4, rotated_translations(4))):
        checks = {r for r in system.h.rows}
        for perm in perms:
            assert sorted(perm) == list(range(system.n_faults))
            moved = system.h.permute_columns(perm)
            assert {r for r in moved.rows} == checks


def test_format_parse_roundtrip(circuit_toy, ut24):
    for system in (circuit_toy, ut24):
        assert parse_system(format_system(system)) == system


def test_label_with_hash_roundtrips(rep5):
    system = DecodingSystem(rep5.h, rep5.a, label="rep5 #run-2")
    text = format_system(system)
    assert parse_system(text) == system
    assert parse_system("  # indented comment\n" + text).label == "rep5 #run-2"


def test_multiline_label_rejected(rep5):
    with pytest.raises(ValueError):
        format_system(DecodingSystem(rep5.h, rep5.a, label="a\nb"))


def test_circuit_toy(circuit_toy):
    assert circuit_toy.n_faults == 5
    assert circuit_toy.n_expanded == 47
    assert circuit_toy.rate_divisor == 15.0
    e = BitVec.from_support(5, [1, 3])
    assert circuit_toy.multiplicity_of(e) == 225


def test_flip_probability_parity(circuit_toy):
    probs = circuit_toy.fault_probabilities(0.15)
    assert probs[0] == pytest.approx(0.01)
    assert probs[1] == pytest.approx(0.5 * (1 - 0.98 ** 15))
    assert probs[1] == pytest.approx(0.130716, abs=1e-6)


def test_compress_expanded_cancels_copies(circuit_toy):
    # expanded indices 1 and 2 both belong to column 1
    assert circuit_toy.compress_expanded([1, 2]).is_zero()
    assert circuit_toy.compress_expanded([0, 1]).support() == [0, 1]


@pytest.mark.parametrize("text, line", [
    ("SYSTEM s\nDIMS M=1 K=1 NTILDE=1 B=1\nFAULT 0 MULT=0 CHECKS=0 ACTIONS=0\n", 3),
    ("SYSTEM s\nDIMS M=1 K=1 NTILDE=1 B=1\nFAULT 0 MULT=1 CHECKS=1 ACTIONS=0\n", 3),
    ("SYSTEM s\nFAULT 0 MULT=1 CHECKS=0 ACTIONS=0\n", 2),
    ("SYSTEM s\nDIMS M=1 K=1 NTILDE=2 B=1\nFAULT 1 MULT=1 CHECKS=0 ACTIONS=0\n", 3),
    ("SYSTEM s\nDIMS M=2 K=1 NTILDE=1 B=1\nFAULT 0 MULT=1 CHECKS=1,0 ACTIONS=0\n", 3),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(SystemFormatError) as info:
        parse_system(text)
    assert info.value.line_number == line


def test_parse_missing_faults():
    with pytest.raises(SystemFormatError):
        parse_system("SYSTEM s\nDIMS M=1 K=1 NTILDE=2 B=1\nFAULT 0 MULT=1 CHECKS=0 ACTIONS=0\n")


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        DecodingSystem(BitMatrix.zeros(1, 3), BitMatrix.zeros(1, 4))


def test_css_split_two_blocks():
    # two rep-3 blocks: columns 0-2 seen by Z checks (rows 0, 1), 3-5 by X checks (rows 2, 3)
    h = BitMatrix.from_rows(["110000", "011000", "000110", "000011"])
    a = BitMatrix.from_rows(["111000", "000111"])
    split = css_split(DecodingSystem(h, a, label="pair"), [2, 3], [0, 1], [0], [1])
    assert split.x_origin == (0, 1, 2)
    assert split.z_origin == (3, 4, 5)
    x_sys = split.x_system()
    assert x_sys.h == BitMatrix.from_rows(["110", "011"])
    assert x_sys.a == BitMatrix.from_rows(["111"])
    with pytest.raises(ValueError):
        css_split(DecodingSystem(h, a), [0, 1], [1, 2, 3], [0], [1])
