"""Exception hierarchy shared by every edgekeeper module.

Each exception carries the RPC error code the api layer reports for it.
"""


class EdgeKeeperError(Exception):
    code = "EINTERNAL"


class NotFound(EdgeKeeperError, LookupError):
    code = "ENOTFOUND"


class InvalidRecord(EdgeKeeperError, ValueError):
    code = "EINVAL"


class InvalidAddress(EdgeKeeperError, ValueError):
    code = "EINVAL"


class StaleUpdate(EdgeKeeperError):
    code = "ESTALE"


class Unreachable(EdgeKeeperError):
    code = "EUNREACH"


class DomainError(EdgeKeeperError, ValueError):
    code = "EINVAL"


class MasterNotFound(EdgeKeeperError):
    code = "ENOMASTER"


class Unauthenticated(EdgeKeeperError):
    code = "EAUTH"


class NoQuorum(EdgeKeeperError):
    code = "ENOQUORUM"


class NotLeader(EdgeKeeperError):
    code = "ENOTLEADER"


class InvalidPath(EdgeKeeperError, ValueError):
    code = "EINVAL"


class ValueTooLarge(EdgeKeeperError, ValueError):
    code = "EINVAL"


class StaleEpoch(EdgeKeeperError):
    code = "ESTALEEPOCH"


class InvalidKey(EdgeKeeperError, ValueError):
    code = "EINVAL"


class ExpiredChallenge(EdgeKeeperError):
    code = "EAUTH"


class VoucherUnknown(EdgeKeeperError):
    code = "EAUTH"


class Looking(EdgeKeeperError):
    """The edge has not formed a replica quorum; clients are not served."""

    code = "ELOOKING"


class MalformedScenario(EdgeKeeperError, ValueError):
    code = "EINVAL"


class ScenarioAssertionFailed(EdgeKeeperError, AssertionError):
    code = "EASSERT"


class QuorumLost(EdgeKeeperError):
    """Raised by reconfiguration measurements when recovery needed a quorum reset."""

    code = "ENOQUORUM"

    def __init__(self, message, time_ms=None, epoch=None):
        super().__init__(message)
        self.time_ms = time_ms
        self.epoch = epoch


class SimTimeout(EdgeKeeperError, TimeoutError):
    code = "ETIMEOUT"
