"""Tokenizer round-trips and instruction-set validation."""

import pytest
from hypothesis import given, settings, strategies as st

from langarm.instructions import (BOS, MAX_LEN, PAD, UNK, VOCAB, Instruction,
                                  InstructionSet, RewardSpec, detokenize,
                                  tokenize)


def test_vocabulary_layout():
    assert VOCAB[PAD] == "<pad>"
    assert VOCAB[UNK] == "<unk>"
    assert VOCAB[BOS] == "<bos>"
    assert len(VOCAB) == 10


def test_tokenize_canonical_instruction():
    ids = tokenize("Touch the blue cube.")
    words = [VOCAB[i] for i in ids]
    assert words == ["<bos>", "touch", "the", "blue", "cube", ".", "<pad>", "<pad>"]


def test_tokenize_is_case_insensitive():
    assert tokenize("TOUCH THE RED CUBE.") == tokenize("touch the red cube.")


def test_tokenize_unknown_word_maps_to_unk():
    ids = tokenize("grab the blue cube.")
    assert ids[1] == UNK


def test_tokenize_empty_string_is_bos_plus_padding():
    ids = tokenize("")
    assert ids == [BOS] + [PAD] * (MAX_LEN - 1)


def test_tokenize_overflow_raises():
    with pytest.raises(ValueError):
        tokenize("touch the blue cube the red cube the green cube.")


def test_detokenize_inverts_tokenize():
    text = "touch the green cube."
    assert detokenize(tokenize(text)) == text


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["touch", "the", "blue", "red", "green", "cube"]),
                min_size=0, max_size=MAX_LEN - 2))
def test_round_trip_over_vocabulary_sentences(words):
    text = " ".join(words) + "."
    if not words:
        text = "."
    assert detokenize(tokenize(text)) == text


def test_instruction_make_records_text_and_tokens():
    inst = Instruction.make(0, "Touch the blue cube.")
    assert inst.id == 0
    assert inst.text == "Touch the blue cube."
    assert inst.tokens == tuple(tokenize("Touch the blue cube."))


def test_reward_spec_rejects_unknown_kind():
    with pytest.raises(ValueError):
        RewardSpec(kind="hug", target_color="blue")


def test_instruction_set_validation():
    inst = Instruction.make(0, "Touch the blue cube.")
    spec = RewardSpec(kind="touch_binary", target_color="blue")
    with pytest.raises(ValueError):  # parallel-list mismatch
        InstructionSet((inst,), ())
    with pytest.raises(ValueError):  # empty
        InstructionSet((), ())
    with pytest.raises(ValueError):  # duplicate ids
        InstructionSet((inst, inst), (spec, spec))
    assert len(InstructionSet((inst,), (spec,))) == 1
