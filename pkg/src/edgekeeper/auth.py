"""Self-certifying GUIDs, CA-signed certificates and edge admission.

A GUID is the SHA-256 digest of a node's raw Ed25519 public key, so anyone
holding the key can prove ownership of the GUID by signing a fresh nonce.
Whether the owner may join the edge is a separate question answered by the
TrustStore: a known CA signature, a public key confirmed by the GNS, or the
word of an already admitted node while the GNS is unreachable.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import json
import os
import secrets
from dataclasses import dataclass, field
from typing import Callable, Optional

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from .errors import ExpiredChallenge, InvalidKey, NotFound, Unreachable, VoucherUnknown

NONCE_BYTES = 32
CHALLENGE_WINDOW_MS = 30_000
BUNDLE_FORMAT = "edgekeeper-bundle-1"


def b64e(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64d(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


def derive_guid(public_key: bytes) -> str:
    if not public_key:
        raise InvalidKey("empty public key")
    return hashlib.sha256(bytes(public_key)).hexdigest()


def _raw_public(key: Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def _raw_private(key: Ed25519PrivateKey) -> bytes:
    return key.private_bytes(
        serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()
    )


def _verify(public_key: bytes, signature: bytes, data: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, data)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


def new_private_key(seed: Optional[bytes] = None) -> Ed25519PrivateKey:
    """Fresh key, or a reproducible one derived from ``seed`` (simulation only)."""
    if seed is None:
        return Ed25519PrivateKey.generate()
    return Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest())


@dataclass(frozen=True)
class Certificate:
    account_name: str
    organization: str
    public_key: bytes
    issuer: str
    signature: bytes = b""

    def signed_bytes(self) -> bytes:
        body = {
            "subject": {"account_name": self.account_name, "organization": self.organization},
            "public_key": b64e(self.public_key),
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()

    @property
    def guid(self) -> str:
        return derive_guid(self.public_key)

    def verify(self, ca_public_key: bytes) -> bool:
        return _verify(ca_public_key, self.signature, self.signed_bytes())

    def to_dict(self) -> dict:
        return {
            "subject": {"account_name": self.account_name, "organization": self.organization},
            "public_key": b64e(self.public_key),
            "issuer": self.issuer,
            "signature": b64e(self.signature),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Certificate":
        return cls(
            account_name=obj["subject"]["account_name"],
            organization=obj["subject"]["organization"],
            public_key=b64d(obj["public_key"]),
            issuer=obj["issuer"],
            signature=b64d(obj["signature"]),
        )


class CertificateAuthority:
    """An organisation's CA: signs client certificates with its private key."""

    def __init__(self, name: str, organization: Optional[str] = None, seed: Optional[bytes] = None):
        self.name = name
        self.organization = organization or name
        self._key = new_private_key(seed)
        self.public_key = _raw_public(self._key)

    def sign(self, account_name, organization, public_key) -> Certificate:
        unsigned = Certificate(account_name, organization, public_key, self.name)
        return Certificate(
            account_name, organization, public_key, self.name, self._key.sign(unsigned.signed_bytes())
        )

    def certificate(self) -> Certificate:
        return self.sign(self.name, self.organization, self.public_key)

    def issue(self, account_name: str, seed: Optional[bytes] = None) -> "Credential":
        key = new_private_key(seed)
        cert = self.sign(account_name, self.organization, _raw_public(key))
        return Credential(
            account_name=account_name,
            organization=self.organization,
            public_key=cert.public_key,
            private_key=_raw_private(key),
            certificate=cert,
            ca_certificate=self.certificate(),
        )


@dataclass(frozen=True)
class Credential:
    account_name: str
    organization: str
    public_key: bytes
    private_key: bytes = field(repr=False)
    certificate: Certificate
    ca_certificate: Optional[Certificate] = None

    @property
    def guid(self) -> str:
        return derive_guid(self.public_key)

    def sign(self, data: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.private_key).sign(data)


@dataclass
class Challenge:
    nonce: bytes
    issued_to: str
    issued_at: float
    window_ms: float = CHALLENGE_WINDOW_MS
    used: bool = False

    def expired(self, now) -> bool:
        return now is not None and now - self.issued_at > self.window_ms

    def to_message(self) -> dict:
        return {"type": "chal", "nonce_b64": b64e(self.nonce)}


@dataclass(frozen=True)
class Response:
    public_key: bytes
    signature: bytes

    def to_message(self) -> dict:
        return {"type": "chalresp", "pubkey_b64": b64e(self.public_key), "sig_b64": b64e(self.signature)}

    @classmethod
    def from_message(cls, msg: dict) -> "Response":
        return cls(b64d(msg["pubkey_b64"]), b64d(msg["sig_b64"]))


def issue_challenge(
    issued_to: str,
    now: float,
    token_bytes: Callable[[int], bytes] = secrets.token_bytes,
    window_ms: float = CHALLENGE_WINDOW_MS,
) -> Challenge:
    return Challenge(nonce=token_bytes(NONCE_BYTES), issued_to=issued_to, issued_at=now, window_ms=window_ms)


def respond_challenge(challenge: Challenge, cred: Credential, now=None) -> Response:
    if challenge.expired(now):
        raise ExpiredChallenge("challenge window elapsed")
    return Response(public_key=cred.public_key, signature=cred.sign(challenge.nonce))


def verify_response(claimed: str, challenge: Challenge, response: Response, now=None) -> bool:
    """Check that the responder owns the private key behind ``claimed``.

    The challenge is consumed whatever the outcome.
    """
    if challenge.used:
        return False
    challenge.used = True
    if challenge.expired(now):
        return False
    try:
        if derive_guid(response.public_key) != claimed:
            return False
    except InvalidKey:
        return False
    return _verify(response.public_key, response.signature, challenge.nonce)


class Via(str, enum.Enum):
    LOCAL_CA = "local_ca"
    GNS = "gns"
    VOUCH = "vouch"
    DENIED = "denied"


class VouchPolicy(str, enum.Enum):
    ANY_AUTHENTICATED = "any_authenticated"
    SAME_ORG_AS_MASTER = "same_org_as_master"


@dataclass(frozen=True)
class AdmitResult:
    admitted: bool
    via: Via


DENIED = AdmitResult(False, Via.DENIED)


class TrustStore:
    def __init__(self):
        self.ca_certs: dict = {}
        self.ca_certificates: dict = {}
        self.client_certs: dict = {}
        self.vouched: set = set()
        self.vouch_flagged: set = set()

    def add_ca(self, cert: Certificate):
        # CA certificates are self-signed: subject name == CA name
        self.ca_certs[cert.account_name] = cert.public_key
        self.ca_certificates[cert.account_name] = cert

    def is_trusted(self, guid: str) -> bool:
        return guid in self.client_certs


def admit_node(store: TrustStore, cert: Certificate, gns=None) -> AdmitResult:
    ca_key = store.ca_certs.get(cert.issuer)
    if ca_key is not None:
        if not cert.verify(ca_key):
            return DENIED
        store.client_certs[cert.guid] = cert
        return AdmitResult(True, Via.LOCAL_CA)
    if gns is None:
        return DENIED
    try:
        if gns.public_key(cert.guid) != cert.public_key:
            return DENIED
        ca_cert = gns.ca_certificate(cert.issuer)
    except (Unreachable, NotFound):
        return DENIED
    if not cert.verify(ca_cert.public_key):
        return DENIED
    store.add_ca(ca_cert)
    store.client_certs[cert.guid] = cert
    return AdmitResult(True, Via.GNS)


def vouch(
    store: TrustStore,
    voucher: str,
    new_cert: Certificate,
    policy=VouchPolicy.ANY_AUTHENTICATED,
    master_issuer: Optional[str] = None,
) -> AdmitResult:
    """Admit ``new_cert`` offline on the word of the already admitted ``voucher``."""
    voucher_cert = store.client_certs.get(voucher)
    if voucher_cert is None:
        raise VoucherUnknown(f"{voucher} is not in the trust store")
    if VouchPolicy(policy) is VouchPolicy.SAME_ORG_AS_MASTER and voucher_cert.issuer != master_issuer:
        return DENIED
    store.client_certs[new_cert.guid] = new_cert
    store.vouched.add(new_cert.guid)
    return AdmitResult(True, Via.VOUCH)


def recheck_vouched(store: TrustStore, gns) -> list:
    """Vouched-in guids whose CA the reachable GNS does not know.

    They stay trusted; each is reported once so the operator can decide.
    """
    flagged = []
    for guid in sorted(store.vouched - store.vouch_flagged):
        cert = store.client_certs.get(guid)
        if cert is None or cert.issuer in store.ca_certs:
            continue
        try:
            gns.ca_certificate(cert.issuer)
        except NotFound:
            store.vouch_flagged.add(guid)
            flagged.append(guid)
        except Unreachable:
            break
    return flagged


# -- credential bundle ------------------------------------------------------


def _bundle_key(passphrase: str, salt: bytes) -> bytes:
    return Scrypt(salt=salt, length=32, n=2**14, r=8, p=1).derive(passphrase.encode())


def save_bundle(path, cred: Credential, passphrase: str):
    """Write the client cert, CA cert and private key as a passphrase-encrypted JSON file."""
    payload = json.dumps(
        {
            "client_cert": cred.certificate.to_dict(),
            "ca_cert": cred.ca_certificate.to_dict() if cred.ca_certificate else None,
            "private_key": b64e(cred.private_key),
        },
        sort_keys=True,
    ).encode()
    salt, nonce = os.urandom(16), os.urandom(12)
    ciphertext = AESGCM(_bundle_key(passphrase, salt)).encrypt(nonce, payload, BUNDLE_FORMAT.encode())
    with open(path, "w") as fh:
        json.dump(
            {
                "format": BUNDLE_FORMAT,
                "kdf": {"name": "scrypt", "n": 2**14, "r": 8, "p": 1, "salt": b64e(salt)},
                "cipher": {"name": "aes-256-gcm", "nonce": b64e(nonce)},
                "ciphertext": b64e(ciphertext),
            },
            fh,
            indent=2,
        )


def load_bundle(path, passphrase: str) -> Credential:
    with open(path) as fh:
        outer = json.load(fh)
    if outer.get("format") != BUNDLE_FORMAT:
        raise InvalidKey(f"unsupported bundle format {outer.get('format')!r}")
    key = _bundle_key(passphrase, b64d(outer["kdf"]["salt"]))
    try:
        payload = AESGCM(key).decrypt(
            b64d(outer["cipher"]["nonce"]), b64d(outer["ciphertext"]), BUNDLE_FORMAT.encode()
        )
    except InvalidTag:
        raise InvalidKey("wrong passphrase or corrupted bundle") from None
    inner = json.loads(payload)
    cert = Certificate.from_dict(inner["client_cert"])
    ca = Certificate.from_dict(inner["ca_cert"]) if inner.get("ca_cert") else None
    return Credential(
        account_name=cert.account_name,
        organization=cert.organization,
        public_key=cert.public_key,
        private_key=b64d(inner["private_key"]),
        certificate=cert,
        ca_certificate=ca,
    )
