"""ThingSpeak-compatible telemetry service: channels, feeds, accounts, HTTP."""

from .service import (
    AuthenticationError,
    Channel,
    FeedEntry,
    FieldRangeError,
    InvalidKeyError,
    RateLimitedError,
    TelemetryError,
    TelemetryService,
    UnknownChannelError,
    UserAccount,
)
from .httpd import TelemetryHTTPServer, start_server

__all__ = [
    "AuthenticationError",
    "Channel",
    "FeedEntry",
    "FieldRangeError",
    "InvalidKeyError",
    "RateLimitedError",
    "TelemetryError",
    "TelemetryService",
    "TelemetryHTTPServer",
    "UnknownChannelError",
    "UserAccount",
    "start_server",
]
