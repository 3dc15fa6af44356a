import json

import numpy as np
import pytest
from transcript_fuzz import generate_fuzz_case, generate_valid_transcript

from chartduel.protocol import (
    CLIENT,
    FORBIDDEN_KEYS,
    KIND_FEEDBACK,
    MESSAGE_SCHEMAS,
    SERVER,
    ProtocolError,
    ProtocolMessage,
    TranscriptEntry,
    schema_as_dict,
    split_transcript_sessions,
    validate_message,
    validate_transcript,
)


class TestWireFormat:
    def test_round_trip(self):
        msg = ProtocolMessage("tick", 7, {"trial_id": "t", "slot": "top", "point_index": 1, "price": 3.5})
        again = ProtocolMessage.from_wire(msg.to_wire())
        assert again == msg

    def test_rejects_non_json(self):
        with pytest.raises(ProtocolError, match="JSON"):
            ProtocolMessage.from_wire("{nope")

    def test_rejects_missing_seq(self):
        with pytest.raises(ProtocolError, match="seq"):
            ProtocolMessage.from_wire(json.dumps({"kind": "hello", "payload": {}}))

    def test_rejects_extra_top_level_keys(self):
        with pytest.raises(ProtocolError, match="unknown top-level"):
            ProtocolMessage.from_wire(
                json.dumps({"kind": "hello", "seq": 1, "payload": {}, "placement": "top"})
            )


class TestSchema:
    def test_no_message_kind_carries_truth_fields(self):
        # structural no-leak property: the schema simply has no field that
        # could carry placement or truth, for any kind in either direction
        for (kind, direction), fields in MESSAGE_SCHEMAS.items():
            for name in fields:
                assert name.lower() not in FORBIDDEN_KEYS, (kind, direction, name)

    def test_leak_field_flagged_even_when_nested(self):
        msg = ProtocolMessage(
            "contest_list", 1, {"contests": [{"contest_id": "c", "placement": "x"}]}
        )
        codes = {v.code for v in validate_message(msg, SERVER)}
        assert "leak_field" in codes

    def test_direction_enforced(self):
        msg = ProtocolMessage("tick", 1, {"trial_id": "t", "slot": "top", "point_index": 1, "price": 1.0})
        codes = {v.code for v in validate_message(msg, CLIENT)}
        assert "schema_direction" in codes

    def test_enum_and_type_checks(self):
        msg = ProtocolMessage("guess", 1, {"trial_id": "t", "choice": "sideways"})
        codes = {v.code for v in validate_message(msg, CLIENT)}
        assert codes == {"schema_field"}
        msg = ProtocolMessage("guess", 1, {"trial_id": 5, "choice": "top"})
        codes = {v.code for v in validate_message(msg, CLIENT)}
        assert codes == {"schema_field"}

    def test_schema_export_matches_module(self, tmp_path):
        exported = schema_as_dict()
        assert {m["kind"] for m in exported["messages"]} == {k for k, _ in MESSAGE_SCHEMAS}
        # the committed docs file stays in sync with the code
        from pathlib import Path

        docs = Path(__file__).resolve().parents[1] / "docs" / "protocol_schema.json"
        assert json.loads(docs.read_text()) == json.loads(json.dumps(exported))


class TestTranscriptValidation:
    def test_valid_transcripts_pass(self):
        rng = np.random.Generator(np.random.Philox(1))
        for _ in range(50):
            assert validate_transcript(generate_valid_transcript(rng)) == []

    def test_feedback_before_guess_named_violation(self):
        rng = np.random.Generator(np.random.Philox(2))
        entries = generate_valid_transcript(rng)
        # find a guess immediately followed by feedback and swap them
        for i, e in enumerate(entries):
            if e.message.kind == "guess" and entries[i + 1].message.kind == KIND_FEEDBACK:
                swapped = entries[:i] + [entries[i + 1], entries[i]] + entries[i + 2 :]
                break
        codes = {v.code for v in validate_transcript(swapped)}
        assert "feedback_without_guess" in codes

    def test_fuzzed_transcripts_flag_exactly_the_injected_faults(self):
        rng = np.random.Generator(np.random.Philox(3))
        for case in range(400):
            entries, expected = generate_fuzz_case(rng)
            got = {v.code for v in validate_transcript(entries)}
            assert got == expected, f"case {case}: expected {expected}, got {got}"

    def test_split_sessions(self):
        rng = np.random.Generator(np.random.Philox(4))
        entries = generate_valid_transcript(rng)
        relabelled = [
            TranscriptEntry(sender=e.sender, message=e.message, session="s-A")
            for e in entries
        ] + [
            TranscriptEntry(sender=e.sender, message=e.message, session="s-B")
            for e in generate_valid_transcript(rng)
        ]
        groups = split_transcript_sessions(relabelled)
        assert set(groups) == {"s-A", "s-B"}
        assert validate_transcript(groups["s-A"]) == []
        assert validate_transcript(groups["s-B"]) == []

    def test_transcript_entry_round_trip(self):
        rng = np.random.Generator(np.random.Philox(5))
        for entry in generate_valid_transcript(rng):
            again = TranscriptEntry.from_json_line(entry.to_json_line())
            assert again == entry
