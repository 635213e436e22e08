import itertools

import pytest

from civicnet import crypto
from civicnet.canonical import canonical_json
from civicnet.interop import (
    FieldSpec,
    HandshakeAuthFailure,
    MissingCorpus,
    ReplayDetected,
    RequiredFieldMissing,
    SchemaDescriptor,
    SemanticType,
    TamperDetected,
    channel_receive,
    channel_send,
    char_class_profile,
    detect_semantic_type,
    jaccard,
    levenshtein,
    match_schemas,
    name_similarity,
    normalize_date,
    open_gateway_channel,
    transform_document,
    validate_record,
)

from conftest import SeededRand, schema


# --- semantic type detection -----------------------------------------------------


def test_iso_dates_detected():
    assert detect_semantic_type(["1985-03-12", "1990-07-01"]) == (SemanticType.DATE_ISO, 1.0)


def test_empty_input_is_free_text_zero():
    assert detect_semantic_type([]) == (SemanticType.FREE_TEXT, 0.0)


def test_no_rule_match_is_free_text_zero():
    assert detect_semantic_type(["...", "###"]) == (SemanticType.FREE_TEXT, 0.0)


def test_national_id_column_from_corpus(corpus):
    values = corpus.column(("GR", "national_id"), "arithmos_taftotitas")
    assert len(values) >= 20
    semantic, confidence = detect_semantic_type(values)
    assert semantic is SemanticType.NATIONAL_ID
    assert confidence >= 0.9


def test_detection_rule_table():
    cases = [
        ("alice@example.org", SemanticType.EMAIL),
        ("+351912345678", SemanticType.PHONE_NUMBER),
        ("GR", SemanticType.COUNTRY_CODE),
        ("12345678905", SemanticType.SOCIAL_SECURITY_NUMBER),  # checksum valid
        ("34567890123", SemanticType.NATIONAL_ID),  # fails ssn leading-digit rule
        ("Rua Augusta 10, 1100 Lisboa", SemanticType.ADDRESS),
        ("Georgios", SemanticType.PERSON_NAME),
        ("12/03/1985", SemanticType.DATE_ISO),
        ("31.12.1999", SemanticType.DATE_ISO),
        ("99/99/9999", SemanticType.FREE_TEXT),  # impossible date
    ]
    for value, expected in cases:
        semantic, confidence = detect_semantic_type([value])
        assert semantic is expected, value


def test_ssn_checksum_separates_from_national_id():
    good = "12345678905"
    bad = "12345678904"
    assert detect_semantic_type([good])[0] is SemanticType.SOCIAL_SECURITY_NUMBER
    assert detect_semantic_type([bad])[0] is SemanticType.NATIONAL_ID


def test_majority_vote_confidence():
    values = ["1985-03-12"] * 3 + ["not a date"] * 1
    semantic, confidence = detect_semantic_type(values)
    assert semantic is SemanticType.DATE_ISO
    assert confidence == pytest.approx(0.75)


# --- scoring pieces -----------------------------------------------------------------


def test_levenshtein_basics():
    assert levenshtein("", "abc") == 3
    assert levenshtein("abc", "abc") == 0
    assert levenshtein("kitten", "sitting") == 3


def test_name_similarity_synonym_hit(synonyms):
    assert name_similarity("onoma", "vorname", synonyms) == 1.0
    assert name_similarity("onoma", "onoma", synonyms) == 1.0
    assert name_similarity("xx", "yy", synonyms) == 0.0


def test_char_class_profile_and_jaccard():
    profile = char_class_profile(["12/03/1985"])
    assert profile == {"99/99/9999"}
    assert jaccard({"a", "b"}, {"b", "c"}) == pytest.approx(1 / 3)
    assert jaccard(set(), set()) == 1.0


# --- schema matching ----------------------------------------------------------------


def test_self_match_is_identity_with_unit_scores(corpus, synonyms):
    for name in ["gr_national_id", "pt_birth_certificate", "de_national_id"]:
        descriptor = schema(name)
        mapping = match_schemas(descriptor, descriptor, corpus, synonyms)
        assert mapping.unmapped_required == []
        assert len(mapping.pairs) == len(descriptor.fields)
        for src, tgt, score in mapping.pairs:
            assert src == tgt
            assert score == pytest.approx(1.0)


def test_disjoint_schemas_produce_empty_mapping(corpus, synonyms):
    source = SchemaDescriptor(
        country="GR",
        doc_type="national_id",
        fields=(FieldSpec("arithmos_taftotitas", SemanticType.NATIONAL_ID, True),),
        date_format="DD/MM/YYYY",
    )
    target = SchemaDescriptor(
        country="PT",
        doc_type="birth_certificate",
        fields=(FieldSpec("local_nascimento", SemanticType.PERSON_NAME, True),),
        date_format="YYYY-MM-DD",
    )
    mapping = match_schemas(source, target, corpus, synonyms)
    assert mapping.pairs == []
    assert mapping.unmapped_required == ["local_nascimento"]


def test_all_fixture_pairs_map_required_fields(corpus, synonyms):
    for doc_type in ("birth_certificate", "national_id"):
        for a, b in itertools.permutations(("GR", "PT", "DE"), 2):
            mapping = match_schemas(
                schema(f"{a.lower()}_{doc_type}"), schema(f"{b.lower()}_{doc_type}"),
                corpus, synonyms,
            )
            assert mapping.unmapped_required == [], (a, b, doc_type)


def test_matching_is_byte_deterministic(corpus, synonyms):
    source, target = schema("gr_national_id"), schema("pt_national_id")
    first = canonical_json(match_schemas(source, target, corpus, synonyms).to_wire())
    second = canonical_json(match_schemas(source, target, corpus, synonyms).to_wire())
    assert first == second


def test_missing_corpus_error(synonyms, corpus):
    ghost = SchemaDescriptor(
        country="FR", doc_type="national_id",
        fields=(FieldSpec("nom", SemanticType.PERSON_NAME, True),),
    )
    with pytest.raises(MissingCorpus):
        match_schemas(ghost, schema("pt_national_id"), corpus, synonyms)


# --- transformation ----------------------------------------------------------------


def test_identity_transform(corpus, synonyms):
    descriptor = schema("pt_national_id")
    mapping = match_schemas(descriptor, descriptor, corpus, synonyms)
    record = corpus.samples[("PT", "national_id")][0]
    out, report = transform_document(record, mapping, descriptor, descriptor)
    assert out == {k: str(v) for k, v in record.items()}
    assert report.dropped_source == []
    assert report.missing_required == []


def test_date_normalization_gr_to_pt(corpus, synonyms):
    source, target = schema("gr_national_id"), schema("pt_national_id")
    mapping = match_schemas(source, target, corpus, synonyms)
    record = {
        "onoma": "Eleni", "epitheto": "Georgiou",
        "arithmos_taftotitas": "34567890123",
        "imerominia_gennisis": "12/03/1985", "ithageneia": "GR",
    }
    out, report = transform_document(record, mapping, target, source)
    assert out["data_nascimento"] == "1985-03-12"
    assert "data_nascimento" in report.normalized


def test_missing_required_target_fails_without_partial_output(corpus, synonyms):
    source, target = schema("gr_national_id"), schema("pt_national_id")
    mapping = match_schemas(source, target, corpus, synonyms)
    record = {"onoma": "Eleni", "epitheto": "Georgiou"}  # id, date, nationality absent
    with pytest.raises(RequiredFieldMissing) as err:
        transform_document(record, mapping, target, source)
    assert "numero_identificacao" in err.value.fields


def test_every_corpus_sample_transforms_and_validates(corpus, synonyms):
    for doc_type in ("birth_certificate", "national_id"):
        for a, b in itertools.permutations(("GR", "PT", "DE"), 2):
            source, target = schema(f"{a.lower()}_{doc_type}"), schema(f"{b.lower()}_{doc_type}")
            mapping = match_schemas(source, target, corpus, synonyms)
            for record in corpus.samples[(a, doc_type)]:
                out, _ = transform_document(record, mapping, target, source)
                assert validate_record(out, target) is None, (a, b, doc_type)


def test_normalize_date_formats():
    assert normalize_date("12/03/1985", "DD/MM/YYYY") == "1985-03-12"
    assert normalize_date("31.12.1999", "DD.MM.YYYY") == "1999-12-31"
    assert normalize_date("1985-03-12", "YYYY-MM-DD") == "1985-03-12"
    with pytest.raises(ValueError):
        normalize_date("1985-03-12", "DD/MM/YYYY")


def test_validate_record_reports_field_level_reasons():
    descriptor = schema("pt_ssn_certificate")
    reasons = validate_record({"nome_proprio": "Joana", "extra": "x"}, descriptor)
    assert reasons["apelido"] == "required field missing"
    assert reasons["extra"] == "field not in schema"


# --- gateway channel ----------------------------------------------------------------


def channel_fixture():
    rand = SeededRand(21)
    initiator, initiator_kp = crypto.generate_identity("authority", "SysA", seed=b"a" * 32)
    responder, responder_kp = crypto.generate_identity("business", "SysB", seed=b"b" * 32)
    return open_gateway_channel(
        initiator, initiator_kp, responder, responder_kp, randbytes=rand
    )


def test_channel_roundtrip_both_directions():
    a, b = channel_fixture()
    assert channel_receive(b, channel_send(a, b"ping")) == b"ping"
    assert channel_receive(a, channel_send(b, b"pong")) == b"pong"


def test_counters_strictly_increase():
    a, b = channel_fixture()
    first = channel_send(a, b"one")
    second = channel_send(a, b"two")
    assert second["counter"] == first["counter"] + 1
    channel_receive(b, first)
    channel_receive(b, second)


def test_replay_detected_and_channel_closes():
    a, b = channel_fixture()
    message = channel_send(a, b"once")
    channel_receive(b, message)
    with pytest.raises(ReplayDetected):
        channel_receive(b, message)
    assert b.closed


def test_tamper_detected():
    a, b = channel_fixture()
    message = channel_send(a, b"payload")
    raw = bytearray(bytes.fromhex(message["ciphertext"]))
    raw[0] ^= 0x01
    with pytest.raises(TamperDetected):
        channel_receive(b, dict(message, ciphertext=raw.hex()))


def test_handshake_auth_failure():
    rand = SeededRand(22)
    initiator, initiator_kp = crypto.generate_identity("authority", "SysA", seed=b"a" * 32)
    responder, responder_kp = crypto.generate_identity("business", "SysB", seed=b"b" * 32)
    with pytest.raises(HandshakeAuthFailure):
        open_gateway_channel(
            initiator, initiator_kp, responder, responder_kp,
            randbytes=rand, tamper_initiator_sig=True,
        )
