import pytest
from hypothesis import given, strategies as st

from emsynth.corpus import PROGRAM_FILES, injected_path, program_source
from emsynth.isa import (
    Catalog,
    CatalogError,
    ParseError,
    PathError,
    calibration_catalog,
    delete,
    flatten_paths,
    inject,
    parse_instructions,
    parse_program,
    position_after,
    render_program,
    single_path,
)


def test_catalog_covers_reference_mnemonics(catalog):
    expected = {"sbi", "clr", "ldi", "mov", "cp", "breq", "rjmp", "lsl", "lsr", "ses", "cls",
                "sev", "clv", "and", "add", "eor", "sub", "asr", "com", "adc", "sbc", "ser", "nop"}
    assert set(catalog.mnemonics) == expected
    assert len(catalog) == 23


def test_datasheet_cycles(catalog):
    assert catalog["sbi"].cycles == 2
    assert catalog["rjmp"].cycles == 2
    assert catalog["breq"].cycles == 1 and catalog["breq"].taken_cycles == 2
    for mn in ("add", "ses", "clr", "ldi", "nop"):
        assert catalog[mn].cycles == 1


def test_op_class_is_function_of_mnemonic(catalog):
    a = catalog.instruction("lsr", ["r2"])
    b = catalog.instruction("lsr", ["r7"])
    assert a.op_class == b.op_class == "arithmetic"
    assert catalog["clv"].op_class == "flag"
    assert catalog["clr"].op_class == "logic"


def test_catalog_csv_roundtrip(catalog):
    again = Catalog.from_csv(catalog.to_csv())
    assert again.to_csv() == catalog.to_csv()
    assert again.digest() == catalog.digest()


def test_catalog_minimal_three_columns():
    cat = Catalog.from_csv("mnemonic,cycles,op_class\nnop,1,nop\nfoo,3,arithmetic\n")
    assert cat["foo"].cycles == 3
    assert not cat["foo"].conditional


def test_catalog_rejects_bad_class():
    with pytest.raises(CatalogError):
        Catalog.from_csv("mnemonic,cycles,op_class\nnop,1,weird\n")


def test_program_a_has_17_instruction_path(paths):
    assert len(paths["A"]) == 17
    assert len(paths["B"]) == 17


def test_program_b_takes_first_label(paths):
    mn = paths["B"].mnemonics
    # breq is taken, so "rjmp loop" right after it is skipped
    i = mn.index("breq")
    assert mn[i + 1] == "ldi"
    assert paths["B"].instructions[i].taken
    assert paths["B"].instructions[i].cycles == 2
    assert mn[-1] == "rjmp"


def test_setup_is_separate(paths):
    prog = paths["A"].program
    assert [i.render() for i in prog.setup] == ["sbi ddrb, 6"]
    assert prog.labels["loop"] == 0
    assert prog.labels["first_label"] == 7


def test_unknown_mnemonic_names_it():
    with pytest.raises(CatalogError, match="xyz"):
        parse_program("loop:\n  xyz r1\n  rjmp loop\n")


def test_empty_loop_body():
    with pytest.raises(ParseError):
        parse_program("setup:\n  sbi ddrb, 6\nloop:\n")


def test_unresolved_label_reports_line():
    with pytest.raises(ParseError) as exc:
        parse_program("loop:\n  nop\n  rjmp nowhere\n")
    assert exc.value.line == 3


@pytest.mark.parametrize("line", ["add r1", "ldi r2, 1", "sbi pinb, 9", "add r1, 5", "mov r40, r1", "ldi r20, zz"])
def test_malformed_operand_reports_line(line):
    with pytest.raises(ParseError) as exc:
        parse_program(f"loop:\n  nop\n  {line}\n")
    assert exc.value.line == 3


def test_comments_blank_lines_and_inline_labels():
    prog = parse_program("; header\n\nloop: nop ; spin\n\n  rjmp loop\n")
    assert [i.mnemonic for i in prog.loop_body] == ["nop", "rjmp"]
    assert prog.labels == {"loop": 0}


def test_no_loop_label_means_whole_body():
    prog = parse_program("nop\nadd r1, r2\n")
    assert len(prog.loop_body) == 2 and not prog.setup


@pytest.mark.parametrize("name", list(PROGRAM_FILES))
def test_render_roundtrip_on_corpus(name):
    prog = parse_program(program_source(name), name=name)
    assert parse_program(render_program(prog), name=name) == prog


def test_zero_branch_program_has_one_path():
    prog = parse_program("loop:\n  nop\n  add r1, r2\n")
    out = flatten_paths(prog)
    assert len(out) == 1
    assert [i.mnemonic for i in out[0].instructions] == ["nop", "add"]


TWO_BRANCHES = """
loop:
    cp r1, r2
    breq skip1
    add r1, r2
skip1:
    cp r3, r4
    breq skip2
    sub r3, r4
skip2:
    rjmp loop
"""


def test_two_unresolved_branches_give_four_paths():
    prog = parse_program(TWO_BRANCHES)
    out = flatten_paths(prog)
    got = sorted(tuple(i.signal_key for i in p.instructions) for p in out)
    # hand enumeration of the 2^2 resolutions
    expected = sorted([
        ("cp", "breq", "add", "cp", "breq", "sub", "rjmp"),
        ("cp", "breq", "add", "cp", "breq.taken", "rjmp"),
        ("cp", "breq.taken", "cp", "breq", "sub", "rjmp"),
        ("cp", "breq.taken", "cp", "breq.taken", "rjmp"),
    ])
    assert got == expected
    assert sorted(p.path_id for p in out) == [0, 1, 2, 3]


def test_fixed_resolution_gives_one_path(paths):
    prog = paths["B"].program
    site = prog.branch_sites()[0]
    assert len(flatten_paths(prog, {site: True})) == 1
    not_taken = flatten_paths(prog, {site: False})[0]
    assert not_taken.mnemonics == ["sbi", "clr", "ldi", "ldi", "cp", "breq", "rjmp"]


def test_path_cap():
    body = "loop:\n" + "".join(f"  breq l{i}\nl{i}:\n  nop\n" for i in range(7))
    prog = parse_program(body)
    with pytest.raises(PathError, match="7 unresolved"):
        flatten_paths(prog, max_paths=16)


def test_nonterminating_iteration():
    prog = parse_program("loop:\n  nop\nback:\n  add r1, r2\n  rjmp back\n")
    with pytest.raises(PathError):
        flatten_paths(prog)


def test_inject_easy_and_hard_match_listings(paths):
    for case in ("easy", "hard"):
        assert injected_path(paths["B"], case).instructions == paths[case].instructions
    assert len(paths["easy"]) == len(paths["B"]) + 4
    assert len(paths["hard"]) == len(paths["B"]) + 2


def test_inject_leaves_original(paths):
    b = paths["B"]
    before = b.instructions
    out = inject(b, 3, parse_instructions("com r3"))
    assert b.instructions == before
    assert len(out) == len(b) + 1 and out.instructions[3].mnemonic == "com"


def test_empty_injection_is_identity(paths):
    assert inject(paths["B"], 5, []) == paths["B"]


def test_inject_out_of_range(paths):
    with pytest.raises(PathError):
        inject(paths["B"], len(paths["B"]) + 1, [])
    with pytest.raises(PathError):
        inject(paths["B"], -1, [])


def test_position_after(paths):
    pos = position_after(paths["B"], "add r1,r2")
    assert paths["B"].instructions[pos - 1].render() == "add r1, r2"


payload_st = st.lists(st.sampled_from(["asr r3", "com r3", "adc r3, r2", "nop", "ses"]), max_size=6)


@given(pos=st.integers(0, 17), payload=payload_st)
def test_inject_then_delete_restores(pos, payload):
    b = single_path(parse_program(program_source("B")))
    ins = parse_instructions("\n".join(payload))
    assert delete(inject(b, pos, ins), pos, len(ins)) == b


def test_calibration_catalog_cycles():
    cal = calibration_catalog()
    assert cal["asr"].cycles + cal["com"].cycles == 5
    assert cal["adc"].cycles + cal["sbc"].cycles == 5
    assert cal["breq"].taken_cycles == 5
