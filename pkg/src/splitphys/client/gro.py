"""Graphics objects: client-side proxies whose pose is owned by the server."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..interpolator import interpolate
from ..protocol.codec import TransformRecord
from ..protocol.delta import apply_record
from ..transform import Transform


class NotReady(LookupError):
    """No update has been received for the entity yet."""


@dataclass
class GraphicsObject:
    entity: int
    owner: int = 0
    interactable: bool = False
    kinematic: bool = False
    buffer: list = field(default_factory=list)    # up to two (server_time, Transform), oldest first
    colliding: set = field(default_factory=set)
    stale_updates: int = 0

    @property
    def latest(self) -> Optional[Transform]:
        return self.buffer[-1][1] if self.buffer else None

    @property
    def latest_time(self) -> Optional[float]:
        return self.buffer[-1][0] if self.buffer else None

    def push(self, server_time: float, t: Transform) -> bool:
        """Append a timestamped pose; older-than-newest updates are discarded."""
        if self.buffer:
            newest = self.buffer[-1][0]
            if server_time < newest:
                self.stale_updates += 1
                return False
            if server_time == newest:
                self.buffer[-1] = (server_time, t)
                return True
        self.buffer.append((server_time, t))
        if len(self.buffer) > 2:
            del self.buffer[0]
        return True

    def apply(self, server_time: float, rec: TransformRecord) -> bool:
        base = self.latest if self.latest is not None else Transform()
        return self.push(server_time, apply_record(base, rec))

    def sample(self, playback_time: float) -> Transform:
        """Blend the buffered pair, one buffered interval behind ``playback_time``.

        With a single entry, or when playback runs past the newest entry, the
        newest pose is returned.
        """
        if not self.buffer:
            raise NotReady(self.entity)
        if len(self.buffer) == 1:
            return self.buffer[0][1]
        (t0, a), (t1, b) = self.buffer
        span = t1 - t0
        alpha = (playback_time - span - t0) / span
        if alpha >= 1.0:
            return b
        if alpha <= 0.0:
            return a
        return interpolate(a, b, alpha)
