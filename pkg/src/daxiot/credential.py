"""Authorization credentials with selective disclosure.

An issuer turns each per-broker authorization claim into a salted disclosure,
keeps only the disclosure digests inside the signed token, and hands both to
the holder. The holder later presents the token plus exactly the disclosures
that concern one verifier, so one broker never learns what the holder is
allowed to do elsewhere.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .crypto import SigningKeyPair, sign, verify
from .did import Did, Resolver
from .errors import (
    BadSignature,
    CredentialError,
    DidError,
    MalformedCredential,
    NothingToPresent,
    Revoked,
    SubjectMismatch,
    UnknownDisclosure,
    UntrustedIssuer,
)

logger = logging.getLogger(__name__)

CREDENTIAL_TYPE = "AuthorizationCredential"
SALT_LEN = 16

_PUBLISH_KEY = "pub"
_SUBSCRIBE_KEY = "sub"


def _b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _b64url_decode(text: str) -> bytes:
    try:
        return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except (binascii.Error, ValueError) as exc:
        raise MalformedCredential(f"bad base64url segment: {exc}") from exc


def _canonical_json(value: object) -> bytes:
    # Digest equality depends on byte-exact serialization: no whitespace,
    # member order preserved as built.
    return json.dumps(value, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


# ---------------------------------------------------------------------------
# Claims and disclosures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuthorizationClaim:
    """Per-broker topic rights: what the subject may publish and subscribe."""

    broker_did: str
    publish_topics: frozenset[str] = frozenset()
    subscribe_topics: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "publish_topics", frozenset(self.publish_topics))
        object.__setattr__(self, "subscribe_topics", frozenset(self.subscribe_topics))
        if not self.publish_topics and not self.subscribe_topics:
            raise CredentialError("a claim must grant at least one topic")
        for topic in (*self.publish_topics, *self.subscribe_topics):
            if not topic:
                raise CredentialError("topic strings must be non-empty")

    def value_object(self) -> dict:
        value: dict = {}
        if self.subscribe_topics:
            value[_SUBSCRIBE_KEY] = sorted(self.subscribe_topics)
        if self.publish_topics:
            value[_PUBLISH_KEY] = sorted(self.publish_topics)
        return value

    @classmethod
    def from_value(cls, broker_did: str, value: dict) -> "AuthorizationClaim":
        if not isinstance(value, dict):
            raise MalformedCredential("claim value must be an object")
        pub = value.get(_PUBLISH_KEY, [])
        sub = value.get(_SUBSCRIBE_KEY, [])
        if not isinstance(pub, list) or not isinstance(sub, list):
            raise MalformedCredential("claim topic lists must be arrays")
        return cls(
            broker_did=broker_did,
            publish_topics=frozenset(pub),
            subscribe_topics=frozenset(sub),
        )


@dataclass(frozen=True)
class Disclosure:
    """The [salt, key, value] triple whose digest the credential commits to."""

    salt: str
    key: str
    value: dict

    def serialize(self) -> bytes:
        return _canonical_json([self.salt, self.key, self.value])

    def digest(self) -> str:
        return _b64url(hashlib.sha256(self.serialize()).digest())

    def encoded(self) -> str:
        """base64url form used inside the tilde-separated compact presentation."""
        return _b64url(self.serialize())

    @classmethod
    def decode(cls, text: str) -> "Disclosure":
        raw = _b64url_decode(text)
        try:
            data = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedCredential(f"disclosure is not JSON: {exc}") from exc
        if not isinstance(data, list) or len(data) != 3:
            raise MalformedCredential("disclosure must be a [salt, key, value] array")
        salt, key, value = data
        if not isinstance(salt, str) or not isinstance(key, str) or not isinstance(value, dict):
            raise MalformedCredential("disclosure fields have wrong types")
        return cls(salt=salt, key=key, value=value)

    def claim(self) -> AuthorizationClaim:
        return AuthorizationClaim.from_value(self.key, self.value)


def hash_disclosure(disclosure: Disclosure) -> str:
    """Digest of the canonical disclosure bytes: base64url(SHA-256(bytes))."""
    return disclosure.digest()


# ---------------------------------------------------------------------------
# Credential and presentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SdJwtCredential:
    """Signed token whose payload holds disclosure digests instead of claims.

    The base64url header/payload segments are stored verbatim: signature
    validity is a property of the exact transmitted bytes, not of any
    re-serialization.
    """

    header_b64: str
    payload_b64: str
    signature: bytes

    @property
    def header(self) -> dict:
        return self._segment(self.header_b64, "header")

    @property
    def payload(self) -> dict:
        return self._segment(self.payload_b64, "payload")

    @staticmethod
    def _segment(b64: str, name: str) -> dict:
        try:
            data = json.loads(_b64url_decode(b64).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedCredential(f"credential {name} is not JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise MalformedCredential(f"credential {name} must be a JSON object")
        return data

    def signing_input(self) -> bytes:
        return f"{self.header_b64}.{self.payload_b64}".encode("ascii")

    def compact(self) -> str:
        return f"{self.header_b64}.{self.payload_b64}.{_b64url(self.signature)}"

    @classmethod
    def parse(cls, compact: str) -> "SdJwtCredential":
        parts = compact.split(".")
        if len(parts) != 3:
            raise MalformedCredential("compact credential must have three dot-separated parts")
        header_b64, payload_b64, signature_b64 = parts
        return cls(
            header_b64=header_b64,
            payload_b64=payload_b64,
            signature=_b64url_decode(signature_b64),
        )


@dataclass(frozen=True)
class Presentation:
    """A credential plus the disclosures chosen for one verifier."""

    credential: SdJwtCredential
    disclosures: tuple[Disclosure, ...]

    def compact(self) -> str:
        parts = [self.credential.compact()]
        parts.extend(d.encoded() for d in self.disclosures)
        return "~".join(parts) + "~"

    @classmethod
    def parse(cls, compact: str) -> "Presentation":
        if not compact.endswith("~"):
            raise MalformedCredential("compact presentation must end with '~'")
        segments = compact[:-1].split("~")
        credential = SdJwtCredential.parse(segments[0])
        disclosures = tuple(Disclosure.decode(seg) for seg in segments[1:])
        return cls(credential=credential, disclosures=disclosures)


@dataclass(frozen=True)
class AuthorizationGrant:
    """Topic sets a verifier extracted from the disclosures aimed at it."""

    publish_topics: frozenset[str] = frozenset()
    subscribe_topics: frozenset[str] = frozenset()


# ---------------------------------------------------------------------------
# Trusted issuers and revocation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrustedIssuerList:
    """Exact-match set of issuer DIDs the verifier accepts."""

    members: frozenset[str] = frozenset()

    def contains(self, did: Did | str) -> bool:
        return str(did) in self.members

    def with_member(self, did: Did | str) -> "TrustedIssuerList":
        return TrustedIssuerList(self.members | {str(did)})

    def without_member(self, did: Did | str) -> "TrustedIssuerList":
        return TrustedIssuerList(self.members - {str(did)})

    @classmethod
    def load(cls, path: Path | str) -> "TrustedIssuerList":
        data = json.loads(Path(path).read_text("utf-8"))
        if not isinstance(data, list) or not all(isinstance(d, str) for d in data):
            raise CredentialError(f"{path}: trusted issuer file must be a JSON array of DIDs")
        return cls(frozenset(data))

    def save(self, path: Path | str) -> None:
        _atomic_write(Path(path), json.dumps(sorted(self.members), indent=2).encode() + b"\n")


class CredentialStatus(Enum):
    ACTIVE = "ACTIVE"
    REVOKED = "REVOKED"


@dataclass
class RevocationRegistry:
    """jti -> status map; absent ids are ACTIVE and revocation is permanent."""

    _revoked: set[str] = field(default_factory=set)

    def status(self, jti: str) -> CredentialStatus:
        return CredentialStatus.REVOKED if jti in self._revoked else CredentialStatus.ACTIVE

    def revoke(self, jti: str) -> "RevocationRegistry":
        self._revoked.add(jti)
        return self

    @classmethod
    def load(cls, path: Path | str) -> "RevocationRegistry":
        data = json.loads(Path(path).read_text("utf-8"))
        if not isinstance(data, dict):
            raise CredentialError(f"{path}: revocation registry must be a JSON object")
        return cls({jti for jti, status in data.items() if status == CredentialStatus.REVOKED.value})

    def save(self, path: Path | str) -> None:
        data = {jti: CredentialStatus.REVOKED.value for jti in sorted(self._revoked)}
        _atomic_write(Path(path), json.dumps(data, indent=2).encode() + b"\n")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Issuance, presentation, verification
# ---------------------------------------------------------------------------

def issue(
    issuer_keypair: SigningKeyPair,
    issuer_did: Did | str,
    subject_did: Did | str,
    claims: Sequence[AuthorizationClaim],
    jti: str,
) -> tuple[SdJwtCredential, list[Disclosure]]:
    """Sign a credential over salted claim digests; returns it with the disclosures.

    jti uniqueness is the issuer's responsibility.
    """
    if not claims:
        raise CredentialError("cannot issue a credential without claims")
    issuer_did = str(Did.parse(issuer_did))
    subject_did = str(Did.parse(subject_did))
    if issuer_did == subject_did:
        logger.warning("issuing a self-credential: issuer and subject are both %s", issuer_did)

    disclosures = [
        Disclosure(salt=_b64url(os.urandom(SALT_LEN)), key=claim.broker_did, value=claim.value_object())
        for claim in claims
    ]
    payload = {
        "iss": issuer_did,
        "sub": subject_did,
        "type": CREDENTIAL_TYPE,
        "jti": jti,
        "_sd": [d.digest() for d in disclosures],
    }
    header = {"alg": "EdDSA", "typ": "sd-jwt"}
    credential = SdJwtCredential(
        header_b64=_b64url(_canonical_json(header)),
        payload_b64=_b64url(_canonical_json(payload)),
        signature=b"",
    )
    signature = sign(issuer_keypair, credential.signing_input())
    credential = SdJwtCredential(
        header_b64=credential.header_b64,
        payload_b64=credential.payload_b64,
        signature=signature,
    )
    return credential, disclosures


def present(
    credential: SdJwtCredential,
    all_disclosures: Iterable[Disclosure],
    selected_broker: Did | str,
) -> Presentation:
    """Select exactly the disclosures that concern one broker."""
    broker = str(Did.parse(selected_broker))
    chosen = tuple(d for d in all_disclosures if d.key == broker)
    if not chosen:
        raise NothingToPresent(f"no authorization claim concerns {broker}")
    return Presentation(credential=credential, disclosures=chosen)


def verify_presentation(
    presentation: Presentation,
    expected_subject: Did | str,
    verifier_did: Did | str,
    til: TrustedIssuerList,
    rr: RevocationRegistry,
    resolver: Resolver,
) -> AuthorizationGrant:
    """Run the fixed verification sequence and extract the verifier's grant.

    Order is normative: subject match, issuer trust, signature, revocation,
    disclosure digests, then claim collection. A failure at one step is
    reported as that step's error and later steps are not attempted. Error
    messages never echo claim contents.
    """
    payload = presentation.credential.payload
    if payload.get("type") != CREDENTIAL_TYPE:
        raise MalformedCredential(f"credential type must be {CREDENTIAL_TYPE}")

    # 1. The claims must be about the peer we authenticated.
    expected_subject = str(Did.parse(expected_subject))
    if payload.get("sub") != expected_subject:
        raise SubjectMismatch(
            f"credential subject {payload.get('sub')!r} is not the authenticated peer"
        )

    # 2. Issuer membership precedes any signature work.
    issuer = payload.get("iss")
    if not isinstance(issuer, str) or not til.contains(issuer):
        raise UntrustedIssuer(f"issuer {issuer!r} is not a trusted issuer")

    # 3. Resolve the issuer document and check the token signature.
    try:
        issuer_document = resolver.resolve(issuer)
    except DidError as exc:
        raise BadSignature(f"issuer document unavailable: {exc}") from exc
    if not verify(
        issuer_document.verification_key,
        presentation.credential.signing_input(),
        presentation.credential.signature,
    ):
        raise BadSignature("credential signature is invalid")

    # 4. Revocation is checked only for otherwise-valid credentials.
    jti = payload.get("jti")
    if not isinstance(jti, str):
        raise MalformedCredential("credential jti missing")
    if rr.status(jti) is CredentialStatus.REVOKED:
        raise Revoked(f"credential {jti} is revoked")

    # 5. Every presented disclosure must be committed to in _sd.
    digests = payload.get("_sd")
    if not isinstance(digests, list):
        raise MalformedCredential("credential _sd missing")
    for disclosure in presentation.disclosures:
        if disclosure.digest() not in digests:
            raise UnknownDisclosure(f"disclosure digest {disclosure.digest()} not committed")

    # 6. Collect the verifier's own claims; duplicate keys union their topics.
    verifier = str(Did.parse(verifier_did))
    publish: set[str] = set()
    subscribe: set[str] = set()
    for disclosure in presentation.disclosures:
        if disclosure.key != verifier:
            continue
        claim = disclosure.claim()
        publish |= claim.publish_topics
        subscribe |= claim.subscribe_topics
    return AuthorizationGrant(
        publish_topics=frozenset(publish), subscribe_topics=frozenset(subscribe)
    )


# ---------------------------------------------------------------------------
# Credential files (holder-side storage, also used by the issuer CLI)
# ---------------------------------------------------------------------------

CREDENTIAL_FILENAME = "credential.sdjwt"


def save_credential_files(
    directory: Path | str, credential: SdJwtCredential, disclosures: Sequence[Disclosure]
) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [directory / CREDENTIAL_FILENAME]
    written[0].write_text(credential.compact() + "\n", "utf-8")
    for index, disclosure in enumerate(disclosures):
        path = directory / f"disclosure-{index:03d}.json"
        path.write_bytes(disclosure.serialize() + b"\n")
        written.append(path)
    return written


def load_credential_files(directory: Path | str) -> tuple[SdJwtCredential, list[Disclosure]]:
    directory = Path(directory)
    credential_path = directory / CREDENTIAL_FILENAME
    if not credential_path.exists():
        raise CredentialError(f"no {CREDENTIAL_FILENAME} under {directory}")
    credential = SdJwtCredential.parse(credential_path.read_text("utf-8").strip())
    disclosures = []
    for path in sorted(directory.glob("disclosure-*.json")):
        data = json.loads(path.read_text("utf-8"))
        if not isinstance(data, list) or len(data) != 3:
            raise MalformedCredential(f"{path}: not a disclosure array")
        disclosures.append(Disclosure(salt=data[0], key=data[1], value=data[2]))
    return credential, disclosures
