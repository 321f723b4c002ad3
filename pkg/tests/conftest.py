import hashlib

import pytest

from edgekeeper.auth import CertificateAuthority


def guid_of(label: str) -> str:
    return hashlib.sha256(label.encode()).hexdigest()


@pytest.fixture(scope="session")
def ca():
    return CertificateAuthority("ca.acme", "acme", seed=b"test-ca")


@pytest.fixture(scope="session")
def issue(ca):
    cache = {}

    def make(account, authority=None):
        authority = authority or ca
        key = (authority.name, account)
        if key not in cache:
            cache[key] = authority.issue(account, seed=f"{authority.name}:{account}".encode())
        return cache[key]

    return make
