"""Monitoring events: the fan-out bus, built-in sinks and the retained
stream log feeding the live event feed.

File-sink line format (documented external interface)::

    <iso8601> <job_id>[.<subjob>] <kind> <key=value ...>
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Iterable, Optional

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    SUBMITTED = "submitted"
    STARTED = "started"
    HEARTBEAT = "heartbeat"
    OUTPUT_LINE = "output_line"
    COMPLETED = "completed"
    STATUS_CHANGED = "status_changed"
    CREDENTIAL_WARNING = "credential_warning"


@dataclass
class MonitorEvent:
    kind: EventKind
    job_id: Optional[int] = None
    subjob_index: Optional[int] = None
    timestamp: Optional[datetime] = None
    payload: dict[str, str] = field(default_factory=dict)
    seq: int = 0

    def __post_init__(self):
        self.kind = EventKind(self.kind)
        if self.timestamp is None:
            self.timestamp = datetime.now(timezone.utc)

    @property
    def fq_job(self) -> str:
        if self.job_id is None:
            return "-"
        if self.subjob_index is None:
            return str(self.job_id)
        return f"{self.job_id}.{self.subjob_index}"

    def to_document(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind.value,
            "job_id": self.job_id,
            "subjob_index": self.subjob_index,
            "timestamp": self.timestamp.isoformat(),
            "payload": dict(self.payload),
        }

    def to_line(self) -> str:
        pairs = " ".join(f"{k}={v}" for k, v in sorted(self.payload.items()))
        line = f"{self.timestamp.isoformat()} {self.fq_job} {self.kind.value}"
        return f"{line} {pairs}" if pairs else line


@dataclass
class _Sensor:
    sensor_id: int
    sink: Callable[[MonitorEvent], None]
    kinds: Optional[frozenset]


class EventBus:
    """Fan events out to registered sensors on a dedicated dispatch thread.

    A failing sink is logged and isolated; it never blocks other sinks or
    the emitting thread.
    """

    def __init__(self):
        self._queue: queue.Queue = queue.Queue()
        self._sensors: dict[int, _Sensor] = {}
        self._lock = threading.Lock()
        self._next_id = 0
        self._seq = 0
        self._thread = threading.Thread(target=self._dispatch_loop,
                                        name="taskyard-events", daemon=True)
        self._stopped = False
        self._thread.start()

    def register_sensor(self, sink, kinds: Optional[Iterable] = None) -> int:
        handle = getattr(sink, "handle", None)
        callback = handle if callable(handle) else sink
        if not callable(callback):
            raise TypeError("sink must be callable or expose .handle(event)")
        with self._lock:
            self._next_id += 1
            kindset = frozenset(EventKind(k) for k in kinds) if kinds else None
            self._sensors[self._next_id] = _Sensor(self._next_id, callback, kindset)
            return self._next_id

    def unregister_sensor(self, sensor_id: int):
        with self._lock:
            self._sensors.pop(sensor_id, None)

    def emit(self, event: MonitorEvent):
        with self._lock:
            self._seq += 1
            event.seq = self._seq
        self._queue.put(event)

    def flush(self):
        """Block until every emitted event has been dispatched."""
        self._queue.join()

    def stop(self):
        self.flush()
        self._stopped = True
        self._queue.put(None)
        self._thread.join(timeout=5)

    def _dispatch_loop(self):
        while True:
            event = self._queue.get()
            if event is None:
                self._queue.task_done()
                return
            with self._lock:
                sensors = list(self._sensors.values())
            for sensor in sensors:
                if sensor.kinds is not None and event.kind not in sensor.kinds:
                    continue
                try:
                    sensor.sink(event)
                except Exception:
                    logger.exception("event sink %d failed; isolating", sensor.sensor_id)
            self._queue.task_done()


class FileSink:
    """Append one line per event to a log file."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()

    def handle(self, event: MonitorEvent):
        with self._lock:
            with open(self.path, "a") as fh:
                fh.write(event.to_line() + "\n")


class StreamLog:
    """Retained ring of recent events with sequence cursors for reconnection."""

    def __init__(self, retention: int = 5000):
        self.retention = max(retention, 1000)
        self._events: list[MonitorEvent] = []
        self._cond = threading.Condition()

    def handle(self, event: MonitorEvent):
        with self._cond:
            self._events.append(event)
            if len(self._events) > self.retention:
                del self._events[: len(self._events) - self.retention]
            self._cond.notify_all()

    def last_seq(self) -> int:
        with self._cond:
            return self._events[-1].seq if self._events else 0

    def events_since(self, since: int) -> list[MonitorEvent]:
        with self._cond:
            return [e for e in self._events if e.seq > since]

    def wait_for_more(self, since: int, timeout: float = 1.0) -> list[MonitorEvent]:
        with self._cond:
            fresh = [e for e in self._events if e.seq > since]
            if fresh:
                return fresh
            self._cond.wait(timeout)
            return [e for e in self._events if e.seq > since]
