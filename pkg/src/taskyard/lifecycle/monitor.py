"""Internal monitoring loop.

A scheduler thread dispatches per-backend poll cycles onto a bounded worker
pool: one in-flight poll per backend, scheduled at that backend's poll rate.
A poll that exceeds the timeout is abandoned -- its late result is discarded
when it eventually returns -- so one slow backend can never starve the
others.  Workers also ingest the wrapper event spools and hand status
reports to the session, which serializes all job mutation.
"""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from ..errors import AlreadyRunning, BackendUnavailable
from .credentials import CredentialState

logger = logging.getLogger(__name__)


@dataclass
class MonitorConfig:
    pool_size: int = 3
    default_poll_rate_s: float = 0.5
    per_backend_poll_rate_s: dict[str, float] = field(default_factory=dict)
    poll_timeout_s: float = 5.0
    credential_warn_repeat_s: float = 60.0

    def rate_for(self, backend_name: str) -> float:
        return self.per_backend_poll_rate_s.get(backend_name,
                                                self.default_poll_rate_s)

    def min_rate(self) -> float:
        rates = [self.default_poll_rate_s, *self.per_backend_poll_rate_s.values()]
        return min(rates)


@dataclass
class _Inflight:
    started_at: float
    future: Optional[Future] = None
    abandoned: bool = False


class MonitorService:
    """Poll scheduling, timeout isolation and credential expiry tracking."""

    def __init__(self, session, config: Optional[MonitorConfig] = None):
        self.session = session
        self.config = config or MonitorConfig()
        self._lock = threading.Lock()
        self._inflight: dict[str, _Inflight] = {}
        self._last_started: dict[str, float] = {}
        self._pool: Optional[ThreadPoolExecutor] = None
        self._thread: Optional[threading.Thread] = None
        self._stop = threading.Event()
        self._last_credential_warning = float("-inf")

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    # -- control ------------------------------------------------------------

    def start(self):
        if self.running:
            raise AlreadyRunning("monitor already running")
        if self.config.poll_timeout_s >= self.config.min_rate():
            logger.warning(
                "poll_timeout_s (%.3fs) >= fastest poll rate (%.3fs); "
                "slow backends may lag a full cycle",
                self.config.poll_timeout_s, self.config.min_rate(),
            )
        self._stop.clear()
        self._pool = ThreadPoolExecutor(
            max_workers=self.config.pool_size,
            thread_name_prefix="taskyard-poll",
        )
        self._thread = threading.Thread(target=self._scheduler_loop,
                                        name="taskyard-monitor", daemon=True)
        self._thread.start()
        logger.info("monitor started (pool=%d)", self.config.pool_size)

    def stop(self):
        if not self.running:
            return
        self._stop.set()
        self._thread.join(timeout=self.config.poll_timeout_s + 1.0)
        self._pool.shutdown(wait=False, cancel_futures=True)
        self._thread = None
        self._pool = None
        logger.info("monitor stopped")

    # -- scheduling -----------------------------------------------------------

    def _tick_interval(self) -> float:
        return min(max(self.config.min_rate() / 5.0, 0.02), 0.25)

    def _scheduler_loop(self):
        while not self._stop.is_set():
            try:
                self._schedule_cycle()
            except Exception:
                logger.exception("monitor scheduler error")
            self._stop.wait(self._tick_interval())

    def _schedule_cycle(self):
        now = time.monotonic()
        self._check_credential()
        for name in self.session.active_backend_names():
            with self._lock:
                entry = self._inflight.get(name)
                if entry is not None:
                    if entry.future is not None and entry.future.done():
                        self._inflight.pop(name, None)
                    elif (not entry.abandoned
                          and now - entry.started_at > self.config.poll_timeout_s):
                        entry.abandoned = True
                        logger.warning(
                            "poll of backend %s exceeded %.1fs; abandoning "
                            "(late result will be discarded)",
                            name, self.config.poll_timeout_s,
                        )
                        continue
                    else:
                        continue
                if now - self._last_started.get(name, float("-inf")) < self.config.rate_for(name):
                    continue
                self._last_started[name] = now
                entry = _Inflight(started_at=now)
                self._inflight[name] = entry
                entry.future = self._pool.submit(self._poll_cycle, name)

    def _poll_cycle(self, backend_name: str):
        try:
            targets = self.session.collect_poll_targets(backend_name)
            backend = self.session.backends[backend_name]
            reports = None
            if targets:
                try:
                    reports = backend.poll([item for _, item in targets])
                except BackendUnavailable as exc:
                    logger.warning("backend %s unavailable: %s (treated as no change)",
                                   backend_name, exc)
            if self._discard_late(backend_name):
                return
            self.session.process_poll_results(backend_name, targets, reports)
        except Exception:
            logger.exception("poll cycle for %s failed", backend_name)

    def _discard_late(self, backend_name: str) -> bool:
        with self._lock:
            entry = self._inflight.get(backend_name)
            if entry is not None and entry.abandoned:
                logger.warning("discarding late poll result from %s", backend_name)
                return True
        return False

    # -- credentials --------------------------------------------------------------

    def _check_credential(self):
        credential = self.session.credential
        if credential is None:
            return
        state = credential.check()
        if state is not CredentialState.WARNING:
            return
        now = time.monotonic()
        if now - self._last_credential_warning < self.config.credential_warn_repeat_s:
            return
        self._last_credential_warning = now
        self.session.emit_credential_warning(credential)

    # -- synchronous pump (tests, embedded mode) ----------------------------------

    def pump_once(self):
        """Poll every backend with active jobs once, inline, and apply results."""
        self._check_credential()
        for name in self.session.active_backend_names():
            targets = self.session.collect_poll_targets(name)
            if not targets:
                continue
            backend = self.session.backends[name]
            try:
                reports = backend.poll([item for _, item in targets])
            except BackendUnavailable as exc:
                logger.warning("backend %s unavailable: %s", name, exc)
                reports = None
            self.session.process_poll_results(name, targets, reports)
