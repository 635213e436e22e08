"""Seeded generator for the synthetic country corpora, schema files, synonym
table, and fixture accounts. Everything it writes is a pure function of the
seed, so the shipped fixtures can be regenerated with

    civicnet corpus generate --seed 7 --out .
"""

from __future__ import annotations

import hashlib
import json
import random
from pathlib import Path

from .canonical import canonical_json
from .interop import FieldSpec, SchemaDescriptor, SemanticType
from .wallet import CredentialStore

ST = SemanticType

GIVEN_NAMES = {
    "GR": ["Georgios", "Eleni", "Dimitra", "Nikolaos", "Katerina", "Andreas", "Sofia", "Petros"],
    "PT": ["Joana", "Miguel", "Ines", "Tiago", "Mariana", "Rui", "Beatriz", "Duarte"],
    "DE": ["Hans", "Greta", "Lukas", "Anna", "Felix", "Clara", "Jonas", "Lena"],
}
SURNAMES = {
    "GR": ["Papadopoulos", "Nikolaou", "Georgiou", "Katsaros", "Economou", "Vlachos"],
    "PT": ["Silva", "Santos", "Ferreira", "Pereira", "Oliveira", "Costa"],
    "DE": ["Mueller", "Schmidt", "Schneider", "Fischer", "Weber", "Wagner"],
}
CITIES = {
    "GR": ["Athens", "Patras", "Thessaloniki", "Heraklion"],
    "PT": ["Lisboa", "Porto", "Coimbra", "Braga"],
    "DE": ["Berlin", "Hamburg", "Muenchen", "Koeln"],
}
STREETS = {
    "GR": ["Odos Ermou", "Leoforos Alexandras", "Odos Aiolou"],
    "PT": ["Rua Augusta", "Avenida da Liberdade", "Rua do Carmo"],
    "DE": ["Hauptstrasse", "Bahnhofstrasse", "Gartenweg"],
}

DATE_FORMATS = {"GR": "DD/MM/YYYY", "PT": "YYYY-MM-DD", "DE": "DD.MM.YYYY"}

SYNONYM_GROUPS = [
    ["onoma", "nome_proprio", "vorname", "given_name", "first_name"],
    ["epitheto", "apelido", "nachname", "surname", "last_name", "family_name"],
    ["imerominia_gennisis", "data_nascimento", "geburtsdatum", "birth_date", "date_of_birth"],
    ["topos_gennisis", "local_nascimento", "geburtsort", "birth_place", "place_of_birth"],
    ["arithmos_taftotitas", "numero_identificacao", "ausweisnummer", "id_number"],
    ["ithageneia", "nacionalidade", "staatsangehoerigkeit", "nationality", "citizenship"],
    ["dieuthinsi", "morada", "anschrift", "address"],
    ["imerominia_lixis", "data_validade", "ablaufdatum", "expiry_date"],
    ["onoma_patera", "nome_pai", "name_vater", "father_name"],
    ["onoma_miteras", "nome_mae", "name_mutter", "mother_name"],
    ["arithmos_koinonikis_asfalisis", "numero_seguranca_social", "sozialversicherungsnummer", "ssn_number"],
    ["imerominia_ekdosis", "data_emissao", "ausstellungsdatum", "issue_date"],
]

_FIELD_NAMES = {
    # (country, logical field) -> local field name
    ("GR", "given"): "onoma",
    ("GR", "surname"): "epitheto",
    ("GR", "birth_date"): "imerominia_gennisis",
    ("GR", "birth_place"): "topos_gennisis",
    ("GR", "father"): "onoma_patera",
    ("GR", "mother"): "onoma_miteras",
    ("GR", "id_number"): "arithmos_taftotitas",
    ("GR", "nationality"): "ithageneia",
    ("GR", "address"): "dieuthinsi",
    ("GR", "expiry"): "imerominia_lixis",
    ("PT", "given"): "nome_proprio",
    ("PT", "surname"): "apelido",
    ("PT", "birth_date"): "data_nascimento",
    ("PT", "birth_place"): "local_nascimento",
    ("PT", "father"): "nome_pai",
    ("PT", "mother"): "nome_mae",
    ("PT", "id_number"): "numero_identificacao",
    ("PT", "nationality"): "nacionalidade",
    ("PT", "address"): "morada",
    ("PT", "expiry"): "data_validade",
    ("DE", "given"): "vorname",
    ("DE", "surname"): "nachname",
    ("DE", "birth_date"): "geburtsdatum",
    ("DE", "birth_place"): "geburtsort",
    ("DE", "father"): "name_vater",
    ("DE", "mother"): "name_mutter",
    ("DE", "id_number"): "ausweisnummer",
    ("DE", "nationality"): "staatsangehoerigkeit",
    ("DE", "address"): "anschrift",
    ("DE", "expiry"): "ablaufdatum",
}


def build_schemas() -> list[SchemaDescriptor]:
    schemas = []
    for country in ("GR", "PT", "DE"):
        n = lambda logical: _FIELD_NAMES[(country, logical)]
        fmt = DATE_FORMATS[country]
        schemas.append(
            SchemaDescriptor(
                country=country,
                doc_type="birth_certificate",
                date_format=fmt,
                fields=(
                    FieldSpec(n("given"), ST.PERSON_NAME, True),
                    FieldSpec(n("surname"), ST.PERSON_NAME, True),
                    FieldSpec(n("birth_date"), ST.DATE_ISO, True),
                    FieldSpec(n("birth_place"), ST.PERSON_NAME, True),
                    FieldSpec(n("father"), ST.PERSON_NAME, False),
                    FieldSpec(n("mother"), ST.PERSON_NAME, False),
                ),
            )
        )
        schemas.append(
            SchemaDescriptor(
                country=country,
                doc_type="national_id",
                date_format=fmt,
                fields=(
                    FieldSpec(n("given"), ST.PERSON_NAME, True),
                    FieldSpec(n("surname"), ST.PERSON_NAME, True),
                    FieldSpec(n("id_number"), ST.NATIONAL_ID, True),
                    FieldSpec(n("birth_date"), ST.DATE_ISO, True),
                    FieldSpec(n("nationality"), ST.COUNTRY_CODE, True),
                    FieldSpec(n("address"), ST.ADDRESS, False),
                    FieldSpec(n("expiry"), ST.DATE_ISO, False),
                ),
            )
        )
    schemas.append(
        SchemaDescriptor(
            country="PT",
            doc_type="ssn_certificate",
            date_format="YYYY-MM-DD",
            fields=(
                FieldSpec("nome_proprio", ST.PERSON_NAME, True),
                FieldSpec("apelido", ST.PERSON_NAME, True),
                FieldSpec("numero_seguranca_social", ST.SOCIAL_SECURITY_NUMBER, True),
                FieldSpec("data_emissao", ST.DATE_ISO, True),
            ),
        )
    )
    schemas.append(
        SchemaDescriptor(
            country="GR",
            doc_type="diploma",
            date_format="DD/MM/YYYY",
            fields=(
                FieldSpec("onoma", ST.PERSON_NAME, True),
                FieldSpec("epitheto", ST.PERSON_NAME, True),
                FieldSpec("titlos_spoudon", ST.FREE_TEXT, True),
                FieldSpec("imerominia_apofoitisis", ST.DATE_ISO, True),
                FieldSpec("idryma", ST.FREE_TEXT, True),
            ),
        )
    )
    return schemas


def _format_date(rng: random.Random, fmt: str, year_range=(1950, 2004)) -> str:
    year = rng.randint(*year_range)
    month = rng.randint(1, 12)
    day = rng.randint(1, 28)
    if fmt == "YYYY-MM-DD":
        return f"{year:04d}-{month:02d}-{day:02d}"
    if fmt == "DD/MM/YYYY":
        return f"{day:02d}/{month:02d}/{year:04d}"
    return f"{day:02d}.{month:02d}.{year:04d}"


def make_national_id_number(rng: random.Random) -> str:
    # 11 digits, leading 3-9 so the value never collides with the SSN rule
    return str(rng.randint(3, 9)) + "".join(str(rng.randint(0, 9)) for _ in range(10))


def make_ssn_number(rng: random.Random) -> str:
    # 11 digits, leading 1 or 2, trailing mod-10 checksum
    body = str(rng.choice([1, 2])) + "".join(str(rng.randint(0, 9)) for _ in range(9))
    return body + str(sum(int(c) for c in body) % 10)


def make_address(rng: random.Random, country: str) -> str:
    street = rng.choice(STREETS[country])
    number = rng.randint(1, 200)
    postal = rng.randint(10000, 99999)
    city = rng.choice(CITIES[country])
    return f"{street} {number}, {postal} {city}"


def generate_record(rng: random.Random, schema: SchemaDescriptor) -> dict:
    country = schema.country
    record = {}
    for spec in schema.fields:
        if spec.semantic_type is ST.PERSON_NAME:
            pool = GIVEN_NAMES[country] if "surname" not in spec.name and not spec.name.startswith(
                ("epitheto", "apelido", "nachname")
            ) else SURNAMES[country]
            if spec.name in (_FIELD_NAMES[(country, "birth_place")] if (country, "birth_place") in _FIELD_NAMES else ""):
                record[spec.name] = rng.choice(CITIES[country])
            else:
                record[spec.name] = rng.choice(pool)
        elif spec.semantic_type is ST.DATE_ISO:
            year_range = (2024, 2034) if spec.name in (
                "imerominia_lixis", "data_validade", "ablaufdatum"
            ) else (1950, 2004)
            record[spec.name] = _format_date(rng, schema.date_format, year_range)
        elif spec.semantic_type is ST.NATIONAL_ID:
            record[spec.name] = make_national_id_number(rng)
        elif spec.semantic_type is ST.SOCIAL_SECURITY_NUMBER:
            record[spec.name] = make_ssn_number(rng)
        elif spec.semantic_type is ST.COUNTRY_CODE:
            record[spec.name] = country
        elif spec.semantic_type is ST.ADDRESS:
            record[spec.name] = make_address(rng, country)
        else:
            if spec.name == "titlos_spoudon":
                record[spec.name] = rng.choice(
                    ["diploma in computer engineering", "degree in law", "degree in medicine"]
                )
            elif spec.name == "idryma":
                record[spec.name] = "university of patras"
            else:
                record[spec.name] = "n/a"
    return record


FIXTURE_ACCOUNTS = [
    ("alice", "Alice"),
    ("modg", "MoDG"),
    ("uop", "UoP"),
    ("moj-pt", "MoJ-PT"),
    ("employer", "Employer"),
    ("landlord", "Landlord"),
    ("databroker", "DataBroker"),
    ("operator", "Operator"),
]


def fixture_password(username: str) -> str:
    return f"{username}-pass"


def generate_all(seed: int, out_dir: Path, samples_per_schema: int = 24) -> dict:
    """Write schemas/, corpus/, synonyms, date formats, and fixture accounts.

    Returns a manifest of written paths.
    """
    out = Path(out_dir)
    schema_dir = out / "schemas"
    corpus_dir = out / "corpus"
    schema_dir.mkdir(parents=True, exist_ok=True)
    corpus_dir.mkdir(parents=True, exist_ok=True)

    written = {"schemas": [], "corpus": [], "other": []}
    for schema in build_schemas():
        name = f"{schema.country.lower()}_{schema.doc_type}"
        schema_path = schema_dir / f"{name}.json"
        schema_path.write_text(
            json.dumps(schema.to_wire(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        written["schemas"].append(str(schema_path))

        rng = random.Random(f"{seed}/{name}")
        lines = []
        for _ in range(samples_per_schema):
            lines.append(canonical_json(generate_record(rng, schema)).decode("utf-8"))
        corpus_path = corpus_dir / f"{name}.jsonl"
        corpus_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written["corpus"].append(str(corpus_path))

    synonyms_path = corpus_dir / "synonyms.json"
    synonyms_path.write_text(
        json.dumps(SYNONYM_GROUPS, indent=2, sort_keys=False) + "\n", encoding="utf-8"
    )
    written["other"].append(str(synonyms_path))

    formats_path = corpus_dir / "date_formats.json"
    formats_path.write_text(
        json.dumps(DATE_FORMATS, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written["other"].append(str(formats_path))

    accounts_path = corpus_dir / "accounts.jsonl"
    store = CredentialStore()
    for username, display in FIXTURE_ACCOUNTS:
        salt = hashlib.sha256(f"{seed}/{username}".encode("utf-8")).digest()[:16]
        store.add(username, fixture_password(username), display_name=display, salt=salt)
    store.save(accounts_path)
    written["other"].append(str(accounts_path))
    return written
