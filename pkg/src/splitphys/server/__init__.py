from .node import METRICS_COLUMNS, PhysServer
from .scheduler import SendScheduler
from .session import ALL, Avatar, ProtocolError, ServerConfig, Session

__all__ = ["PhysServer", "Session", "ServerConfig", "ProtocolError", "SendScheduler", "Avatar", "ALL", "METRICS_COLUMNS"]
