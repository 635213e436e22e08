"""Identities, signatures, attestations, and multi-recipient envelope encryption.

Each identity holds two keypairs: Ed25519 for signatures and X25519 for key
agreement. A document is sealed once with a fresh 256-bit AES-GCM key; that
key is wrapped separately to each recipient via an ephemeral-static X25519
exchange. Consent-driven sharing re-wraps the key to new recipients instead
of re-encrypting the payload.

All randomness is taken through an injectable ``randbytes`` callable so that
simulated networks stay reproducible; the default is ``secrets.token_bytes``.
"""

from __future__ import annotations

import base64
import hashlib
import secrets
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .canonical import canonical_json
from .content_store import ContentId

RandBytes = Callable[[int], bytes]

ROLES = ("citizen", "authority", "business")


class RoleError(Exception):
    pass


class MalformedSignature(Exception):
    pass


class NotARecipient(Exception):
    """The opening identity holds no wrapped key for this envelope."""


DecryptionDenied = NotARecipient


class UnknownRecipientKey(Exception):
    pass


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))


@dataclass(frozen=True)
class KeyPair:
    sign_private: bytes
    dh_private: bytes

    @classmethod
    def generate(cls, randbytes: RandBytes = secrets.token_bytes) -> "KeyPair":
        return cls(sign_private=randbytes(32), dh_private=randbytes(32))

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        return cls(
            sign_private=hashlib.sha256(seed + b"/sign").digest(),
            dh_private=hashlib.sha256(seed + b"/dh").digest(),
        )

    @property
    def sign_public(self) -> bytes:
        return (
            Ed25519PrivateKey.from_private_bytes(self.sign_private)
            .public_key()
            .public_bytes_raw()
        )

    @property
    def dh_public(self) -> bytes:
        return (
            X25519PrivateKey.from_private_bytes(self.dh_private)
            .public_key()
            .public_bytes_raw()
        )

    @property
    def identity_id(self) -> bytes:
        return hashlib.sha256(self.sign_public).digest()

    def sign(self, payload: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.sign_private).sign(payload)


def verify(sign_public: bytes, payload: bytes, signature: bytes) -> bool:
    if len(signature) != 64:
        raise MalformedSignature(f"signature must be 64 bytes, got {len(signature)}")
    try:
        Ed25519PublicKey.from_public_bytes(sign_public).verify(signature, payload)
        return True
    except InvalidSignature:
        return False


@dataclass
class IdentityRecord:
    identity_id: bytes
    role: str
    display_name: str
    sign_public: bytes
    dh_public: bytes
    attestations: list[tuple[bytes, bytes]] = field(default_factory=list)

    def core_wire(self) -> dict:
        """Attestation-free canonical form; this is what authorities sign."""
        return {
            "dh_public": self.dh_public.hex(),
            "display_name": self.display_name,
            "identity_id": self.identity_id.hex(),
            "role": self.role,
            "sign_public": self.sign_public.hex(),
        }

    def to_wire(self) -> dict:
        wire = self.core_wire()
        wire["attestations"] = [
            {"authority": a.hex(), "signature": s.hex()} for a, s in self.attestations
        ]
        return wire

    @classmethod
    def from_wire(cls, wire: dict) -> "IdentityRecord":
        return cls(
            identity_id=bytes.fromhex(wire["identity_id"]),
            role=wire["role"],
            display_name=wire["display_name"],
            sign_public=bytes.fromhex(wire["sign_public"]),
            dh_public=bytes.fromhex(wire["dh_public"]),
            attestations=[
                (bytes.fromhex(a["authority"]), bytes.fromhex(a["signature"]))
                for a in wire.get("attestations", [])
            ],
        )


def generate_identity(
    role: str,
    display_name: str,
    seed: Optional[bytes] = None,
    randbytes: RandBytes = secrets.token_bytes,
) -> tuple[IdentityRecord, KeyPair]:
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    keypair = KeyPair.from_seed(seed) if seed is not None else KeyPair.generate(randbytes)
    record = IdentityRecord(
        identity_id=keypair.identity_id,
        role=role,
        display_name=display_name,
        sign_public=keypair.sign_public,
        dh_public=keypair.dh_public,
    )
    return record, keypair


def attest_identity(
    authority_record: IdentityRecord,
    authority_keypair: KeyPair,
    record: IdentityRecord,
) -> tuple[bytes, bytes]:
    """Append the authority's attestation to ``record`` and return it."""
    if authority_record.role != "authority":
        raise RoleError(f"{authority_record.display_name} is not an authority")
    if authority_keypair.identity_id != authority_record.identity_id:
        raise RoleError("keypair does not belong to the attesting authority")
    signature = authority_keypair.sign(canonical_json(record.core_wire()))
    attestation = (authority_record.identity_id, signature)
    if attestation not in record.attestations:
        record.attestations.append(attestation)
    return attestation


def verify_attestation(record: IdentityRecord, authority: IdentityRecord) -> bool:
    payload = canonical_json(record.core_wire())
    for authority_id, signature in record.attestations:
        if authority_id == authority.identity_id:
            return verify(authority.sign_public, payload, signature)
    return False


# --- envelopes -------------------------------------------------------------


@dataclass(frozen=True)
class WrappedKey:
    ephemeral_public: bytes
    nonce: bytes
    wrapped: bytes

    def to_wire(self) -> dict:
        return {
            "ephemeral_public": _b64(self.ephemeral_public),
            "nonce": _b64(self.nonce),
            "wrapped": _b64(self.wrapped),
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "WrappedKey":
        return cls(
            ephemeral_public=_unb64(wire["ephemeral_public"]),
            nonce=_unb64(wire["nonce"]),
            wrapped=_unb64(wire["wrapped"]),
        )


@dataclass(frozen=True)
class DocumentEnvelope:
    document_id: str
    ciphertext_cid: ContentId
    schema_ref: tuple[str, str]
    issuer: bytes
    payload_nonce: bytes
    wrapped_keys: dict[bytes, WrappedKey]
    issuer_signature: bytes

    def signed_wire(self) -> dict:
        """Envelope minus wrapped_keys and signature; recipients may change freely."""
        return {
            "ciphertext_cid": self.ciphertext_cid.text,
            "document_id": self.document_id,
            "issuer": self.issuer.hex(),
            "payload_nonce": self.payload_nonce.hex(),
            "schema_ref": list(self.schema_ref),
        }

    def to_wire(self) -> dict:
        wire = self.signed_wire()
        wire["wrapped_keys"] = {
            rid.hex(): wk.to_wire() for rid, wk in sorted(self.wrapped_keys.items())
        }
        wire["issuer_signature"] = _b64(self.issuer_signature)
        return wire

    @classmethod
    def from_wire(cls, wire: dict) -> "DocumentEnvelope":
        return cls(
            document_id=wire["document_id"],
            ciphertext_cid=ContentId.parse(wire["ciphertext_cid"]),
            schema_ref=tuple(wire["schema_ref"]),
            issuer=bytes.fromhex(wire["issuer"]),
            payload_nonce=bytes.fromhex(wire["payload_nonce"]),
            wrapped_keys={
                bytes.fromhex(rid): WrappedKey.from_wire(wk)
                for rid, wk in wire["wrapped_keys"].items()
            },
            issuer_signature=_unb64(wire["issuer_signature"]),
        )

    def encode(self) -> bytes:
        return canonical_json(self.to_wire())

    def verify_issuer_signature(self, issuer_sign_public: bytes) -> bool:
        return verify(
            issuer_sign_public, canonical_json(self.signed_wire()), self.issuer_signature
        )


def _derive_wrap_key(shared: bytes) -> bytes:
    return HKDF(algorithm=SHA256(), length=32, salt=None, info=b"civicnet/key-wrap").derive(shared)


def _wrap_key(sym_key: bytes, recipient_dh_public: bytes, randbytes: RandBytes) -> WrappedKey:
    ephemeral_private = randbytes(32)
    ephemeral = X25519PrivateKey.from_private_bytes(ephemeral_private)
    shared = ephemeral.exchange(X25519PublicKey.from_public_bytes(recipient_dh_public))
    nonce = randbytes(12)
    wrapped = AESGCM(_derive_wrap_key(shared)).encrypt(nonce, sym_key, None)
    return WrappedKey(
        ephemeral_public=ephemeral.public_key().public_bytes_raw(),
        nonce=nonce,
        wrapped=wrapped,
    )


def _unwrap_key(wrapped: WrappedKey, dh_private: bytes) -> bytes:
    shared = X25519PrivateKey.from_private_bytes(dh_private).exchange(
        X25519PublicKey.from_public_bytes(wrapped.ephemeral_public)
    )
    try:
        return AESGCM(_derive_wrap_key(shared)).decrypt(wrapped.nonce, wrapped.wrapped, None)
    except InvalidTag as exc:
        raise NotARecipient("wrapped key does not open with this identity") from exc


def encrypt_payload(sym_key: bytes, nonce: bytes, payload: bytes) -> bytes:
    return AESGCM(sym_key).encrypt(nonce, payload, None)


def decrypt_payload(sym_key: bytes, nonce: bytes, ciphertext: bytes) -> bytes:
    from .errors import IntegrityError

    try:
        return AESGCM(sym_key).decrypt(nonce, ciphertext, None)
    except InvalidTag as exc:
        raise IntegrityError("ciphertext failed authentication") from exc


def seal_document(
    payload: bytes,
    issuer_keypair: KeyPair,
    recipients: Sequence[IdentityRecord],
    schema_ref: tuple[str, str],
    store,
    document_id: Optional[str] = None,
    randbytes: RandBytes = secrets.token_bytes,
) -> DocumentEnvelope:
    """Encrypt ``payload`` once and wrap the key for every recipient.

    The issuer is always a recipient. Ciphertext is stored pinned; plaintext
    never touches the store.
    """
    for record in recipients:
        if len(record.dh_public) != 32:
            raise UnknownRecipientKey(f"no key-agreement key for {record.display_name}")
    if document_id is None:
        document_id = "doc-" + randbytes(16).hex()
    sym_key = randbytes(32)
    payload_nonce = randbytes(12)
    ciphertext = encrypt_payload(sym_key, payload_nonce, payload)
    ciphertext_cid = store.put_bytes(ciphertext, pin=True)

    wrapped_keys: dict[bytes, WrappedKey] = {}
    issuer_id = issuer_keypair.identity_id
    wrapped_keys[issuer_id] = _wrap_key(
        sym_key, X25519PrivateKey.from_private_bytes(issuer_keypair.dh_private)
        .public_key()
        .public_bytes_raw(),
        randbytes,
    )
    for record in recipients:
        if record.identity_id not in wrapped_keys:
            wrapped_keys[record.identity_id] = _wrap_key(sym_key, record.dh_public, randbytes)

    envelope = DocumentEnvelope(
        document_id=document_id,
        ciphertext_cid=ciphertext_cid,
        schema_ref=schema_ref,
        issuer=issuer_id,
        payload_nonce=payload_nonce,
        wrapped_keys=wrapped_keys,
        issuer_signature=b"\x00" * 64,
    )
    signature = issuer_keypair.sign(canonical_json(envelope.signed_wire()))
    return replace(envelope, issuer_signature=signature)


def recover_key(envelope: DocumentEnvelope, keypair: KeyPair) -> bytes:
    wrapped = envelope.wrapped_keys.get(keypair.identity_id)
    if wrapped is None:
        raise NotARecipient(f"identity {keypair.identity_id.hex()[:8]} is not a recipient")
    return _unwrap_key(wrapped, keypair.dh_private)


def open_document(envelope: DocumentEnvelope, keypair: KeyPair, store) -> bytes:
    sym_key = recover_key(envelope, keypair)
    ciphertext = store.get_bytes(envelope.ciphertext_cid)
    return decrypt_payload(sym_key, envelope.payload_nonce, ciphertext)


def add_recipient(
    envelope: DocumentEnvelope,
    granting_keypair: KeyPair,
    new_recipient: IdentityRecord,
    randbytes: RandBytes = secrets.token_bytes,
) -> DocumentEnvelope:
    """Re-wrap the symmetric key to ``new_recipient``; idempotent, signature untouched."""
    if granting_keypair.identity_id not in envelope.wrapped_keys:
        raise PermissionError("granter is not a recipient of this envelope")
    if new_recipient.identity_id in envelope.wrapped_keys:
        return envelope
    sym_key = recover_key(envelope, granting_keypair)
    wrapped_keys = dict(envelope.wrapped_keys)
    wrapped_keys[new_recipient.identity_id] = _wrap_key(
        sym_key, new_recipient.dh_public, randbytes
    )
    return replace(envelope, wrapped_keys=wrapped_keys)


def remove_recipient(envelope: DocumentEnvelope, identity_id: bytes) -> DocumentEnvelope:
    """Drop a wrapped key (future-access revocation; past reads may be cached)."""
    if identity_id == envelope.issuer:
        raise PermissionError("issuer key cannot be removed")
    wrapped_keys = {rid: wk for rid, wk in envelope.wrapped_keys.items() if rid != identity_id}
    return replace(envelope, wrapped_keys=wrapped_keys)
