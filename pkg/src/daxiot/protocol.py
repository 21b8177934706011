"""Handshake and messaging state machines for client and broker roles.

The handshake runs over the connect/challenge/response exchange:

* the client connects under a fresh ephemeral identity and ships its static
  identity encrypted under an ephemeral-static agreement, so the wire never
  shows who is connecting and connections are unlinkable;
* the broker answers with a challenge nonce encrypted under the one-pass
  unified key; decrypting it authenticates the broker to the client;
* the client answers with a selective credential presentation encrypted
  under that key at exactly the challenge nonce; decrypting it authenticates
  the client's static identity to the broker, and the verified disclosures
  become the session's publish/subscribe grant.

Nonce discipline after the challenge: the client-to-broker direction counts
up from the challenge nonce, one value per encryption; a publish uses two
consecutive values (topic at n, payload at n+1) so the broker can prove both
fields belong to the same message. The broker-to-client direction uses a
separate prefix announced in the success acknowledgement, so the two
directions never share nonce space under the one session key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from .credential import (
    AuthorizationGrant,
    Disclosure,
    Presentation,
    RevocationRegistry,
    SdJwtCredential,
    TrustedIssuerList,
    present,
    verify_presentation,
)
from .crypto import (
    AeadEnvelope,
    Nonce,
    SessionKey,
    SigningKeyPair,
    aead_decrypt,
    aead_encrypt,
    ecdh_1pu,
    ecdh_1pu_receiver,
    ecdh_es,
    generate_signing_keypair,
    to_agreement_keypair,
)
from .did import Did, DidDocument, Resolver, didkey_encode
from .errors import (
    AuthenticationError,
    ConnectionRejected,
    CredentialError,
    CryptoError,
    DaxiotError,
    DidError,
    IntegrityError,
    NonceOverflowError,
    ProtocolError,
    ProtocolMismatch,
    ProtocolOrderError,
    ReplayError,
)
from .wire import Packet, PacketKind, ReasonCode

AUTH_METHOD = "DAXiot"

_ES_LABEL = b"DAXiot-ES"
_ONE_PU_LABEL = b"DAXiot-1PU"


def _es_context(ephemeral_did: str, broker_did: str) -> bytes:
    return _ES_LABEL + ephemeral_did.encode("utf-8") + broker_did.encode("utf-8")


def _one_pu_context(static_did: str, broker_did: str) -> bytes:
    return _ONE_PU_LABEL + static_did.encode("utf-8") + broker_did.encode("utf-8")


def _aad(kind: PacketKind, ephemeral_did: str) -> bytes:
    # Binds each envelope to its packet kind and session, blocking
    # cross-context splicing of otherwise valid ciphertexts.
    return bytes([kind]) + ephemeral_did.encode("utf-8")


def _envelope(data: bytes | None, what: str) -> AeadEnvelope:
    if data is None:
        raise ProtocolError(f"{what} is missing its encrypted field")
    try:
        return AeadEnvelope.from_bytes(data)
    except CryptoError as exc:
        raise ProtocolError(f"{what} carries a malformed envelope: {exc}") from exc


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------

class ClientPhase(Enum):
    IDLE = "idle"
    CONNECT_SENT = "connect-sent"
    CHALLENGED = "challenged"
    ESTABLISHED = "established"


class DaxiotClient:
    """Publisher/subscriber protocol engine, transport-agnostic.

    Consumes and produces :class:`Packet` values; a fresh ephemeral identity
    is generated per connection so successive connections are unlinkable.
    """

    def __init__(
        self,
        static_keypair: SigningKeyPair,
        credential: SdJwtCredential,
        disclosures: Iterable[Disclosure],
        resolver: Resolver,
    ) -> None:
        self._static = static_keypair
        self._static_agreement = to_agreement_keypair(static_keypair)
        self.static_did = str(didkey_encode(static_keypair.public))
        self._credential = credential
        self._disclosures = list(disclosures)
        self._resolver = resolver
        self.phase = ClientPhase.IDLE
        self._reset_session()

    def _reset_session(self) -> None:
        self.ephemeral_did: str | None = None
        self.broker_did: str | None = None
        self.broker_document: DidDocument | None = None
        self._ephemeral: SigningKeyPair | None = None
        self._ephemeral_agreement = None
        self.k_es: SessionKey | None = None
        self.k_1pu: SessionKey | None = None
        self._send_nonce: Nonce | None = None
        self._recv_prefix: bytes | None = None
        self._recv_counter: int = 0
        self._pending_subacks = 0
        self._pending_pubacks = 0

    def _require(self, phase: ClientPhase, action: str) -> None:
        if self.phase is not phase:
            raise ProtocolOrderError(f"cannot {action} in phase {self.phase.value}")

    # -- handshake ----------------------------------------------------------

    def begin_connect(self, broker_did: Did | str) -> Packet:
        """Steps A and B: fresh ephemeral identity, encrypted static identity."""
        self._require(ClientPhase.IDLE, "connect")
        broker_did = str(Did.parse(broker_did))
        document = self._resolver.resolve(broker_did)

        ephemeral = generate_signing_keypair()
        ephemeral_agreement = to_agreement_keypair(ephemeral)
        ephemeral_did = str(didkey_encode(ephemeral.public))

        k_es = ecdh_es(
            ephemeral_agreement.secret,
            document.agreement_key,
            _es_context(ephemeral_did, broker_did),
        )
        envelope = aead_encrypt(
            k_es,
            Nonce.fresh(),
            self.static_did.encode("utf-8"),
            _aad(PacketKind.CONNECT, ephemeral_did),
        )

        self._ephemeral = ephemeral
        self._ephemeral_agreement = ephemeral_agreement
        self.ephemeral_did = ephemeral_did
        self.broker_did = broker_did
        self.broker_document = document
        self.k_es = k_es
        self.phase = ClientPhase.CONNECT_SENT
        return Packet(
            kind=PacketKind.CONNECT,
            client_id=ephemeral_did,
            auth_method=AUTH_METHOD,
            auth_data=envelope.to_bytes(),
        )

    def handle_challenge(self, packet: Packet) -> Packet:
        """Steps E and F: authenticate the broker, answer with a presentation."""
        self._require(ClientPhase.CONNECT_SENT, "process a challenge")
        if packet.kind is not PacketKind.AUTH_CHALLENGE:
            raise ProtocolOrderError(f"expected a challenge, got {packet.kind.name}")
        envelope = _envelope(packet.auth_data, "challenge")

        k_1pu = ecdh_1pu(
            self._static_agreement.secret,
            self._ephemeral_agreement.secret,
            self.broker_document.agreement_key,
            _one_pu_context(self.static_did, self.broker_did),
        )
        try:
            plaintext = aead_decrypt(k_1pu, envelope, _aad(PacketKind.AUTH_CHALLENGE, self.ephemeral_did))
        except IntegrityError as exc:
            raise AuthenticationError(
                f"broker could not be authenticated as {self.broker_did}"
            ) from exc
        try:
            challenge_nonce = Nonce.from_bytes(plaintext)
        except CryptoError as exc:
            raise ProtocolError(f"challenge payload is not a nonce: {exc}") from exc

        presentation = present(self._credential, self._disclosures, self.broker_did)
        response = aead_encrypt(
            k_1pu,
            challenge_nonce,
            presentation.compact().encode("utf-8"),
            _aad(PacketKind.AUTH_RESPONSE, self.ephemeral_did),
        )
        self.k_1pu = k_1pu
        self._send_nonce = challenge_nonce.next()
        self.phase = ClientPhase.CHALLENGED
        return Packet(kind=PacketKind.AUTH_RESPONSE, auth_data=response.to_bytes())

    def handle_connack(self, packet: Packet) -> None:
        """Step H, client side: confirm the broker accepted the credential."""
        self._require(ClientPhase.CHALLENGED, "process a connection ack")
        if packet.kind is PacketKind.DISCONNECT:
            raise ConnectionRejected(
                "broker disconnected during the handshake", packet.reason_code
            )
        if packet.kind is not PacketKind.CONNACK:
            raise ProtocolOrderError(f"expected a connection ack, got {packet.kind.name}")
        if packet.reason_code is not ReasonCode.SUCCESS:
            raise ConnectionRejected(
                f"broker rejected the connection: {packet.reason_code.name if packet.reason_code else 'no reason'}",
                packet.reason_code,
            )
        envelope = _envelope(packet.auth_data, "connection ack")
        if envelope.nonce.counter != 0:
            raise ProtocolOrderError("broker receive prefix must start at counter zero")
        try:
            status = aead_decrypt(
                self.k_1pu, envelope, _aad(PacketKind.CONNACK, self.ephemeral_did)
            )
        except IntegrityError as exc:
            raise AuthenticationError("connection ack failed authentication") from exc
        if status != bytes([ReasonCode.SUCCESS]):
            raise AuthenticationError("connection ack payload contradicts its reason code")
        self._recv_prefix = envelope.nonce.prefix
        self._recv_counter = 0
        self.phase = ClientPhase.ESTABLISHED

    # -- established-session operations --------------------------------------

    def _consume_send_nonce(self) -> Nonce:
        nonce = self._send_nonce
        self._send_nonce = nonce.next()
        return nonce

    def subscribe(self, topic: str) -> Packet:
        self._require(ClientPhase.ESTABLISHED, "subscribe")
        envelope = aead_encrypt(
            self.k_1pu,
            self._consume_send_nonce(),
            topic.encode("utf-8"),
            _aad(PacketKind.SUBSCRIBE, self.ephemeral_did),
        )
        self._pending_subacks += 1
        return Packet(kind=PacketKind.SUBSCRIBE, topic=envelope.to_bytes())

    def handle_suback(self, packet: Packet) -> ReasonCode:
        if packet.kind is not PacketKind.SUBACK:
            raise ProtocolOrderError(f"expected a subscribe ack, got {packet.kind.name}")
        if self._pending_subacks == 0:
            raise ProtocolOrderError("subscribe ack without an outstanding subscribe")
        self._pending_subacks -= 1
        return packet.reason_code if packet.reason_code is not None else ReasonCode.PROTOCOL_ERROR

    def publish(self, topic: str, payload: bytes) -> Packet:
        """Step J, publisher side: topic at counter n, payload at n+1."""
        self._require(ClientPhase.ESTABLISHED, "publish")
        aad = _aad(PacketKind.PUBLISH, self.ephemeral_did)
        topic_envelope = aead_encrypt(self.k_1pu, self._consume_send_nonce(), topic.encode("utf-8"), aad)
        payload_envelope = aead_encrypt(self.k_1pu, self._consume_send_nonce(), payload, aad)
        self._pending_pubacks += 1
        return Packet(
            kind=PacketKind.PUBLISH,
            topic=topic_envelope.to_bytes(),
            payload=payload_envelope.to_bytes(),
        )

    def handle_puback(self, packet: Packet) -> ReasonCode:
        if packet.kind is not PacketKind.PUBACK:
            raise ProtocolOrderError(f"expected a publish ack, got {packet.kind.name}")
        if self._pending_pubacks == 0:
            raise ProtocolOrderError("publish ack without an outstanding publish")
        self._pending_pubacks -= 1
        return packet.reason_code if packet.reason_code is not None else ReasonCode.PROTOCOL_ERROR

    def handle_publish(self, packet: Packet) -> tuple[str, bytes]:
        """Step J, subscriber side: decrypt a forwarded message."""
        self._require(ClientPhase.ESTABLISHED, "receive a publish")
        if packet.kind is not PacketKind.PUBLISH:
            raise ProtocolOrderError(f"expected a publish, got {packet.kind.name}")
        topic_envelope = _envelope(packet.topic, "publish topic")
        payload_envelope = _envelope(packet.payload, "publish payload")
        if (
            topic_envelope.nonce.prefix != self._recv_prefix
            or payload_envelope.nonce.prefix != self._recv_prefix
        ):
            raise ReplayError("forwarded publish uses a foreign nonce prefix")
        if topic_envelope.nonce.counter <= self._recv_counter:
            raise ReplayError("forwarded publish counter regressed")
        if payload_envelope.nonce.counter != topic_envelope.nonce.counter + 1:
            raise ReplayError("forwarded topic and payload counters are not consecutive")
        aad = _aad(PacketKind.PUBLISH, self.ephemeral_did)
        topic = aead_decrypt(self.k_1pu, topic_envelope, aad).decode("utf-8")
        payload = aead_decrypt(self.k_1pu, payload_envelope, aad)
        self._recv_counter = payload_envelope.nonce.counter
        return topic, payload

    def disconnect(self) -> Packet:
        """Leave the session; the next connect gets a fresh ephemeral identity."""
        self.phase = ClientPhase.IDLE
        self._reset_session()
        return Packet(kind=PacketKind.DISCONNECT, reason_code=ReasonCode.SUCCESS)


# ---------------------------------------------------------------------------
# Broker
# ---------------------------------------------------------------------------

class BrokerPhase(Enum):
    AWAIT_AUTH = "await-auth"
    ESTABLISHED = "established"


@dataclass
class BrokerSession:
    """Per-client broker state keyed by the client's ephemeral DID."""

    session_id: str
    ephemeral_did: str
    static_did: str
    k_es: SessionKey
    k_1pu: SessionKey
    expected_nonce: Nonce
    phase: BrokerPhase = BrokerPhase.AWAIT_AUTH
    grant: AuthorizationGrant | None = None
    b2c_nonce: Nonce | None = None
    seen_es_nonces: set[bytes] = field(default_factory=set)


@dataclass
class Reply:
    """Broker reaction to one inbound packet."""

    packets: list[Packet] = field(default_factory=list)
    forwards: list[tuple[str, Packet]] = field(default_factory=list)
    close: bool = False
    error: DaxiotError | None = None


def _rejection(
    *packets: Packet, close: bool = False, error: DaxiotError | None = None
) -> Reply:
    return Reply(packets=list(packets), close=close, error=error)


class DaxiotBroker:
    """Broker protocol engine: sessions, authorization, and topic routing.

    Transport-agnostic and single-threaded by contract: callers must
    serialize invocations (an asyncio event loop or one lock suffices).
    ``til_source`` and ``rr_source`` are consulted on every verification so
    issuer-list and revocation edits take effect without a restart.
    """

    def __init__(
        self,
        signing_keypair: SigningKeyPair,
        broker_did: Did | str,
        resolver: Resolver,
        til_source: Callable[[], TrustedIssuerList],
        rr_source: Callable[[], RevocationRegistry],
        event_sink: Callable[[dict], None] | None = None,
        plaintext_tap: list | None = None,
    ) -> None:
        self._keypair = signing_keypair
        self._agreement = to_agreement_keypair(signing_keypair)
        self.broker_did = str(Did.parse(broker_did))
        self._resolver = resolver
        self._til_source = til_source
        self._rr_source = rr_source
        self._event_sink = event_sink
        self._plaintext_tap = plaintext_tap
        self.sessions: dict[str, BrokerSession] = {}
        self.topics: dict[str, set[str]] = {}
        self._seen_es_nonces: set[bytes] = set()

    # -- helpers --------------------------------------------------------------

    def _emit(self, event: str, session: str | None = None, reason: str | None = None) -> None:
        if self._event_sink is not None:
            self._event_sink({"event": event, "session": session, "reason": reason})

    def _tap(self, plaintext: bytes) -> None:
        if self._plaintext_tap is not None:
            self._plaintext_tap.append(plaintext)

    def _decrypt(self, key: SessionKey, envelope: AeadEnvelope, aad: bytes) -> bytes:
        plaintext = aead_decrypt(key, envelope, aad)
        self._tap(plaintext)
        return plaintext

    def _session(self, session_id: str) -> BrokerSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise ProtocolOrderError(f"no session {session_id}")
        return session

    # -- dispatch --------------------------------------------------------------

    def handle_packet(self, session_id: str, packet: Packet) -> Reply:
        """Route one post-connect packet from an existing session."""
        if packet.kind is PacketKind.CONNECT:
            return _rejection(
                Packet(kind=PacketKind.DISCONNECT, reason_code=ReasonCode.PROTOCOL_ERROR),
                close=True,
                error=ProtocolOrderError("duplicate connect on an open session"),
            )
        if packet.kind is PacketKind.AUTH_RESPONSE:
            return self.handle_auth_response(session_id, packet)
        if packet.kind is PacketKind.SUBSCRIBE:
            return self.handle_subscribe(session_id, packet)
        if packet.kind is PacketKind.PUBLISH:
            return self.handle_publish(session_id, packet)
        if packet.kind is PacketKind.DISCONNECT:
            return self.handle_disconnect(session_id)
        return _rejection(
            Packet(kind=PacketKind.DISCONNECT, reason_code=ReasonCode.PROTOCOL_ERROR),
            close=True,
            error=ProtocolOrderError(f"client must not send {packet.kind.name}"),
        )

    # -- handshake ---------------------------------------------------------------

    def handle_connect(self, packet: Packet) -> tuple[str | None, Reply]:
        """Steps C and D: authenticate the ephemeral identity, issue a challenge."""
        if packet.kind is not PacketKind.CONNECT:
            return None, _rejection(
                Packet(kind=PacketKind.DISCONNECT, reason_code=ReasonCode.PROTOCOL_ERROR),
                close=True,
                error=ProtocolOrderError("first packet must be a connect"),
            )
        if packet.auth_method != AUTH_METHOD:
            error = ProtocolMismatch(
                f"authentication method {packet.auth_method!r} is not {AUTH_METHOD!r}"
            )
            self._emit("connect_rejected", packet.client_id, reason=type(error).__name__)
            return None, _rejection(
                Packet(kind=PacketKind.DISCONNECT, reason_code=ReasonCode.PROTOCOL_ERROR),
                close=True,
                error=error,
            )
        try:
            return self._process_connect(packet)
        except DaxiotError as error:
            self._emit("connect_rejected", packet.client_id, reason=type(error).__name__)
            return None, _rejection(
                Packet(kind=PacketKind.DISCONNECT, reason_code=ReasonCode.PROTOCOL_ERROR),
                close=True,
                error=error,
            )

    def _process_connect(self, packet: Packet) -> tuple[str, Reply]:
        if not packet.client_id:
            raise ProtocolError("connect carries no client id")
        if Did.parse(packet.client_id).method != "key":
            raise ProtocolError("client id must be a did:key")
        ephemeral_did = packet.client_id
        envelope = _envelope(packet.auth_data, "connect")

        # Replay detection comes first: an exactly re-delivered connect must
        # be classified as a replay even while its original session lives.
        nonce_bytes = envelope.nonce.to_bytes()
        if nonce_bytes in self._seen_es_nonces:
            raise ReplayError("connect replays a previously seen nonce")
        self._seen_es_nonces.add(nonce_bytes)

        if ephemeral_did in self.sessions:
            raise ProtocolOrderError(f"client id {ephemeral_did} already has a session")

        ephemeral_document = self._resolver.resolve(ephemeral_did)
        k_es = ecdh_es(
            self._agreement.secret,
            ephemeral_document.agreement_key,
            _es_context(ephemeral_did, self.broker_did),
        )
        try:
            static_did_raw = self._decrypt(k_es, envelope, _aad(PacketKind.CONNECT, ephemeral_did))
        except IntegrityError as exc:
            raise AuthenticationError(
                "connect authentication data does not decrypt; sender does not hold the ephemeral key"
            ) from exc
        try:
            static = Did.parse(static_did_raw.decode("utf-8"))
        except (UnicodeDecodeError, DidError) as exc:
            raise ProtocolError(f"connect carries an invalid static DID: {exc}") from exc
        if static.method != "key":
            raise ProtocolError("static client identity must be a did:key")
        static_did = str(static)

        static_document = self._resolver.resolve(static_did)
        k_1pu = ecdh_1pu_receiver(
            self._agreement.secret,
            ephemeral_document.agreement_key,
            static_document.agreement_key,
            _one_pu_context(static_did, self.broker_did),
        )

        challenge_nonce = Nonce.fresh()
        challenge = aead_encrypt(
            k_1pu,
            Nonce.fresh(),
            challenge_nonce.to_bytes(),
            _aad(PacketKind.AUTH_CHALLENGE, ephemeral_did),
        )
        session = BrokerSession(
            session_id=ephemeral_did,
            ephemeral_did=ephemeral_did,
            static_did=static_did,
            k_es=k_es,
            k_1pu=k_1pu,
            expected_nonce=challenge_nonce,
            seen_es_nonces={nonce_bytes},
        )
        self.sessions[ephemeral_did] = session
        self._emit("challenge_sent", ephemeral_did)
        return ephemeral_did, Reply(
            packets=[Packet(kind=PacketKind.AUTH_CHALLENGE, auth_data=challenge.to_bytes())]
        )

    def handle_auth_response(self, session_id: str, packet: Packet) -> Reply:
        """Steps G and H: authenticate the static identity, verify the credential."""
        session = self._session(session_id)

        if session.phase is not BrokerPhase.AWAIT_AUTH:
            # An established session only ever sees this packet from a replay
            # or an injection; reject without evicting, so a recorded frame
            # cannot kick a live session off the broker.
            error: DaxiotError
            try:
                envelope = _envelope(packet.auth_data, "authentication response")
                if envelope.nonce != session.expected_nonce:
                    error = ReplayError("authentication response replays a stale nonce")
                else:
                    error = ProtocolOrderError("authentication response outside the handshake")
            except ProtocolError as exc:
                error = exc
            self._emit("auth_rejected", session_id, reason=type(error).__name__)
            return Reply(error=error)

        def fail(error: DaxiotError, reason_code: ReasonCode) -> Reply:
            self._emit("auth_rejected", session_id, reason=type(error).__name__)
            self._evict(session_id)
            return _rejection(
                Packet(kind=PacketKind.CONNACK, reason_code=reason_code),
                Packet(kind=PacketKind.DISCONNECT, reason_code=reason_code),
                close=True,
                error=error,
            )

        try:
            envelope = _envelope(packet.auth_data, "authentication response")
        except ProtocolError as error:
            return fail(error, ReasonCode.PROTOCOL_ERROR)
        if envelope.nonce != session.expected_nonce:
            return fail(
                ReplayError("authentication response does not use the challenge nonce"),
                ReasonCode.PROTOCOL_ERROR,
            )
        try:
            compact = self._decrypt(
                session.k_1pu, envelope, _aad(PacketKind.AUTH_RESPONSE, session.ephemeral_did)
            )
        except IntegrityError:
            return fail(
                AuthenticationError(
                    "authentication response does not decrypt; sender does not hold the static key"
                ),
                ReasonCode.PROTOCOL_ERROR,
            )

        try:
            presentation = Presentation.parse(compact.decode("utf-8"))
            grant = verify_presentation(
                presentation,
                expected_subject=session.static_did,
                verifier_did=self.broker_did,
                til=self._til_source(),
                rr=self._rr_source(),
                resolver=self._resolver,
            )
        except (CredentialError, UnicodeDecodeError) as exc:
            error = exc if isinstance(exc, CredentialError) else ProtocolError(str(exc))
            return fail(error, ReasonCode.NOT_AUTHORIZED)

        session.grant = grant
        session.expected_nonce = envelope.nonce.next()
        session.phase = BrokerPhase.ESTABLISHED

        b2c_nonce = Nonce.fresh()
        connack_envelope = aead_encrypt(
            session.k_1pu,
            b2c_nonce,
            bytes([ReasonCode.SUCCESS]),
            _aad(PacketKind.CONNACK, session.ephemeral_did),
        )
        session.b2c_nonce = b2c_nonce.next()
        self._emit("authenticated", session_id, reason=session.static_did)
        return Reply(
            packets=[
                Packet(
                    kind=PacketKind.CONNACK,
                    reason_code=ReasonCode.SUCCESS,
                    auth_data=connack_envelope.to_bytes(),
                )
            ]
        )

    # -- established-session operations -----------------------------------------

    def _check_established(self, session: BrokerSession, ack_kind: PacketKind) -> Reply | None:
        if session.phase is not BrokerPhase.ESTABLISHED:
            error = ProtocolOrderError(f"{ack_kind.name} traffic before the session is established")
            self._emit("protocol_error", session.session_id, reason=type(error).__name__)
            self._evict(session.session_id)
            return _rejection(
                Packet(kind=ack_kind, reason_code=ReasonCode.PROTOCOL_ERROR),
                Packet(kind=PacketKind.DISCONNECT, reason_code=ReasonCode.PROTOCOL_ERROR),
                close=True,
                error=error,
            )
        return None

    def handle_subscribe(self, session_id: str, packet: Packet) -> Reply:
        """Step I: decrypt the topic, enforce the subscribe grant, register."""
        session = self._session(session_id)
        early = self._check_established(session, PacketKind.SUBACK)
        if early is not None:
            return early

        def reject(error: DaxiotError, event: str = "subscribe_rejected") -> Reply:
            self._emit(event, session_id, reason=type(error).__name__)
            return _rejection(
                Packet(kind=PacketKind.SUBACK, reason_code=ReasonCode.PROTOCOL_ERROR), error=error
            )

        try:
            envelope = _envelope(packet.topic, "subscribe")
        except ProtocolError as error:
            return reject(error)
        if envelope.nonce != session.expected_nonce:
            return reject(ReplayError("subscribe does not use the next expected nonce"))
        try:
            topic = self._decrypt(
                session.k_1pu, envelope, _aad(PacketKind.SUBSCRIBE, session.ephemeral_did)
            ).decode("utf-8")
        except IntegrityError as error:
            return reject(error)
        except UnicodeDecodeError as exc:
            return reject(ProtocolError(f"subscribe topic is not UTF-8: {exc}"))
        session.expected_nonce = envelope.nonce.next()

        if topic not in session.grant.subscribe_topics:
            self._emit("subscribe_denied", session_id)
            return Reply(
                packets=[Packet(kind=PacketKind.SUBACK, reason_code=ReasonCode.NOT_AUTHORIZED)]
            )
        self.topics.setdefault(topic, set()).add(session_id)
        self._emit("subscribed", session_id)
        return Reply(packets=[Packet(kind=PacketKind.SUBACK, reason_code=ReasonCode.SUCCESS)])

    def handle_publish(self, session_id: str, packet: Packet) -> Reply:
        """Step J: enforce consecutive nonces and the publish grant, fan out."""
        session = self._session(session_id)
        early = self._check_established(session, PacketKind.PUBACK)
        if early is not None:
            return early

        def reject(error: DaxiotError) -> Reply:
            self._emit("publish_rejected", session_id, reason=type(error).__name__)
            return _rejection(
                Packet(kind=PacketKind.PUBACK, reason_code=ReasonCode.PROTOCOL_ERROR), error=error
            )

        try:
            topic_envelope = _envelope(packet.topic, "publish topic")
            payload_envelope = _envelope(packet.payload, "publish payload")
        except ProtocolError as error:
            return reject(error)
        if topic_envelope.nonce != session.expected_nonce:
            return reject(ReplayError("publish topic does not use the next expected nonce"))
        if (
            payload_envelope.nonce.prefix != topic_envelope.nonce.prefix
            or payload_envelope.nonce.counter != topic_envelope.nonce.counter + 1
        ):
            return reject(
                ReplayError("publish payload nonce is not the successor of the topic nonce")
            )
        aad = _aad(PacketKind.PUBLISH, session.ephemeral_did)
        try:
            topic = self._decrypt(session.k_1pu, topic_envelope, aad).decode("utf-8")
            payload = self._decrypt(session.k_1pu, payload_envelope, aad)
        except IntegrityError as error:
            return reject(error)
        except UnicodeDecodeError as exc:
            return reject(ProtocolError(f"publish topic is not UTF-8: {exc}"))
        try:
            session.expected_nonce = payload_envelope.nonce.next()
        except NonceOverflowError as error:
            self._emit("session_exhausted", session_id)
            self._evict(session_id)
            return _rejection(
                Packet(kind=PacketKind.DISCONNECT, reason_code=ReasonCode.PROTOCOL_ERROR),
                close=True,
                error=error,
            )

        if topic not in session.grant.publish_topics:
            self._emit("publish_denied", session_id)
            return Reply(
                packets=[Packet(kind=PacketKind.PUBACK, reason_code=ReasonCode.NOT_AUTHORIZED)]
            )

        forwards: list[tuple[str, Packet]] = []
        for subscriber_id in sorted(self.topics.get(topic, ())):
            subscriber = self.sessions.get(subscriber_id)
            if subscriber is None:
                continue
            try:
                forwards.append((subscriber_id, self._forward(subscriber, topic, payload)))
            except NonceOverflowError:
                self._emit("session_exhausted", subscriber_id)
                self._evict(subscriber_id)
        self._emit("publish_forwarded", session_id, reason=str(len(forwards)))
        return Reply(
            packets=[Packet(kind=PacketKind.PUBACK, reason_code=ReasonCode.SUCCESS)],
            forwards=forwards,
        )

    def _forward(self, subscriber: BrokerSession, topic: str, payload: bytes) -> Packet:
        aad = _aad(PacketKind.PUBLISH, subscriber.ephemeral_did)
        topic_nonce = subscriber.b2c_nonce
        payload_nonce = topic_nonce.next()
        subscriber.b2c_nonce = payload_nonce.next()
        topic_envelope = aead_encrypt(subscriber.k_1pu, topic_nonce, topic.encode("utf-8"), aad)
        payload_envelope = aead_encrypt(subscriber.k_1pu, payload_nonce, payload, aad)
        return Packet(
            kind=PacketKind.PUBLISH,
            topic=topic_envelope.to_bytes(),
            payload=payload_envelope.to_bytes(),
        )

    def handle_disconnect(self, session_id: str) -> Reply:
        if session_id in self.sessions:
            self._emit("disconnected", session_id)
            self._evict(session_id)
        return Reply(close=True)

    def _evict(self, session_id: str) -> None:
        self.sessions.pop(session_id, None)
        for subscribers in self.topics.values():
            subscribers.discard(session_id)

    # -- introspection -------------------------------------------------------------

    def status(self) -> list[dict]:
        """Point-in-time snapshot of every session, for operators."""
        snapshot = []
        # Copy first: callers may snapshot from another thread while the
        # event loop mutates the registry.
        for session in list(self.sessions.values()):
            snapshot.append(
                {
                    "session": session.session_id,
                    "static_did": session.static_did,
                    "phase": session.phase.value,
                    "publish_grants": len(session.grant.publish_topics) if session.grant else 0,
                    "subscribe_grants": len(session.grant.subscribe_topics) if session.grant else 0,
                    "expected_counter": session.expected_nonce.counter,
                    "b2c_counter": session.b2c_nonce.counter if session.b2c_nonce else None,
                }
            )
        return snapshot
