"""Mock session credential with clock injection.

The state is a pure function of (now, issued_at, ttl, warn_threshold,
destroyed flag), which makes expiry behaviour fully testable with a fake
clock.  Backends declare whether they require a credential; operations on
those backends are gated on the credential being usable.
"""

from __future__ import annotations

import time
from enum import Enum
from typing import Callable, Optional

from ..errors import GateError


class CredentialState(str, Enum):
    VALID = "valid"
    WARNING = "warning"
    EXPIRED = "expired"
    DESTROYED = "destroyed"


class MockCredential:
    def __init__(self, label: str = "mock", ttl_s: float = 3600.0,
                 warn_threshold_s: float = 600.0,
                 now_fn: Callable[[], float] = time.time):
        self.label = label
        self.ttl_s = float(ttl_s)
        self.warn_threshold_s = float(warn_threshold_s)
        self._now = now_fn
        self.issued_at = self._now()
        self.destroyed = False

    def remaining(self, now: Optional[float] = None) -> float:
        now = self._now() if now is None else now
        return self.issued_at + self.ttl_s - now

    def check(self, now: Optional[float] = None) -> CredentialState:
        if self.destroyed:
            return CredentialState.DESTROYED
        remaining = self.remaining(now)
        if remaining <= 0:
            return CredentialState.EXPIRED
        if remaining < self.warn_threshold_s:
            return CredentialState.WARNING
        return CredentialState.VALID

    def renew(self, extra_ttl_s: Optional[float] = None):
        """Re-issue the credential from now; resets state to valid."""
        self.issued_at = self._now()
        if extra_ttl_s is not None:
            self.ttl_s = float(extra_ttl_s)
        self.destroyed = False

    def destroy(self):
        self.destroyed = True

    def usable(self, now: Optional[float] = None) -> bool:
        return self.check(now) in (CredentialState.VALID, CredentialState.WARNING)

    def gate(self, operation: str, backend_type: str):
        """Refuse credential-requiring operations once expired or destroyed."""
        state = self.check()
        if state in (CredentialState.VALID, CredentialState.WARNING):
            return
        raise GateError(
            f"credential {self.label!r} is {state.value}; "
            f"{operation} on {backend_type} refused",
            operation=operation,
            backend=backend_type,
        )

    def to_document(self) -> dict:
        return {
            "label": self.label,
            "state": self.check().value,
            "issued_at": self.issued_at,
            "ttl_s": self.ttl_s,
            "warn_threshold_s": self.warn_threshold_s,
            "remaining_s": max(self.remaining(), 0.0) if not self.destroyed else 0.0,
        }
