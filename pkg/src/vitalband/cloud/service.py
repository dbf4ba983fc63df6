"""Channel, feed, account and session bookkeeping behind the HTTP surface.

All mutation goes through one lock, which keeps per-channel entry ids gapless
under concurrent writers and gives readers a consistent snapshot.
"""

from __future__ import annotations

import hashlib
import hmac
import random
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from . import storage

KEY_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
KEY_LENGTH = 16
TOKEN_ALPHABET = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
TOKEN_LENGTH = 32
MAX_FIELDS = 8
DEFAULT_MIN_UPDATE_INTERVAL_S = 15.0
DEFAULT_SESSION_TTL_S = 3600.0
DEFAULT_FEED_RESULTS = 100

_PBKDF2_ITERATIONS = 100_000
_DUMMY_SALT = bytes(16)
_DUMMY_DIGEST = hashlib.pbkdf2_hmac("sha256", b"\x00", _DUMMY_SALT, _PBKDF2_ITERATIONS)


class TelemetryError(Exception):
    """Base class for request-level failures."""


class InvalidKeyError(TelemetryError):
    pass


class RateLimitedError(TelemetryError):
    pass


class FieldRangeError(TelemetryError):
    pass


class UnknownChannelError(TelemetryError):
    pass


class AuthenticationError(TelemetryError):
    pass


@dataclass
class Channel:
    id: int
    name: str
    field_names: list[str]
    write_key: str
    read_key: str
    created_at: datetime
    min_update_interval_s: float = DEFAULT_MIN_UPDATE_INTERVAL_S


@dataclass(frozen=True)
class FeedEntry:
    entry_id: int
    created_at: datetime
    field_values: list[float | None]


@dataclass
class UserAccount:
    username: str
    salt: bytes
    password_digest: bytes
    channel_ids: list[int] = field(default_factory=list)


def _format_ts(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _parse_ts(text: str) -> datetime:
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def _digest(password: str, salt: bytes) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, _PBKDF2_ITERATIONS)


class TelemetryService:
    """In-memory state plus optional on-disk persistence.

    clock is injectable (epoch seconds) so rate limiting and session expiry
    are testable without sleeping.
    """

    def __init__(
        self,
        data_dir: str | Path | None = None,
        *,
        min_update_interval_s: float = DEFAULT_MIN_UPDATE_INTERVAL_S,
        session_ttl_s: float = DEFAULT_SESSION_TTL_S,
        seed: int = 0,
        clock: Callable[[], float] = time.time,
        fsync: bool = False,
    ):
        self._data_dir = Path(data_dir) if data_dir is not None else None
        self._min_update_interval_s = min_update_interval_s
        self._session_ttl_s = session_ttl_s
        self._clock = clock
        self._fsync = fsync
        self._rng = random.Random(seed)
        self._lock = threading.RLock()
        self._channels: dict[int, Channel] = {}
        self._feeds: dict[int, list[FeedEntry]] = {}
        self._users: dict[str, UserAccount] = {}
        self._sessions: dict[str, tuple[str, float]] = {}
        if self._data_dir is not None:
            self._data_dir.mkdir(parents=True, exist_ok=True)
            self._load()

    # -- persistence -------------------------------------------------------

    def _load(self) -> None:
        for raw in storage.read_json(self._data_dir / storage.CHANNELS_FILE, []):
            channel = Channel(
                id=raw["id"],
                name=raw["name"],
                field_names=list(raw["field_names"]),
                write_key=raw["write_key"],
                read_key=raw["read_key"],
                created_at=_parse_ts(raw["created_at"]),
                min_update_interval_s=raw.get(
                    "min_update_interval_s", DEFAULT_MIN_UPDATE_INTERVAL_S
                ),
            )
            self._channels[channel.id] = channel
            entries = []
            for rec in storage.load_jsonl(storage.feed_path(self._data_dir, channel.id)):
                entries.append(
                    FeedEntry(
                        entry_id=rec["entry_id"],
                        created_at=_parse_ts(rec["created_at"]),
                        field_values=list(rec["field_values"]),
                    )
                )
            self._feeds[channel.id] = entries
        for raw in storage.read_json(self._data_dir / storage.USERS_FILE, []):
            user = UserAccount(
                username=raw["username"],
                salt=bytes.fromhex(raw["salt"]),
                password_digest=bytes.fromhex(raw["password_digest"]),
                channel_ids=list(raw["channel_ids"]),
            )
            self._users[user.username] = user

    def _persist_channels(self) -> None:
        if self._data_dir is None:
            return
        payload = [
            {
                "id": c.id,
                "name": c.name,
                "field_names": c.field_names,
                "write_key": c.write_key,
                "read_key": c.read_key,
                "created_at": _format_ts(c.created_at),
                "min_update_interval_s": c.min_update_interval_s,
            }
            for c in self._channels.values()
        ]
        storage.write_json(self._data_dir / storage.CHANNELS_FILE, payload)

    def _persist_users(self) -> None:
        if self._data_dir is None:
            return
        payload = [
            {
                "username": u.username,
                "salt": u.salt.hex(),
                "password_digest": u.password_digest.hex(),
                "channel_ids": u.channel_ids,
            }
            for u in self._users.values()
        ]
        storage.write_json(self._data_dir / storage.USERS_FILE, payload)

    def _persist_entry(self, channel_id: int, entry: FeedEntry) -> None:
        if self._data_dir is None:
            return
        storage.append_jsonl(
            storage.feed_path(self._data_dir, channel_id),
            {
                "entry_id": entry.entry_id,
                "created_at": _format_ts(entry.created_at),
                "field_values": entry.field_values,
            },
            fsync=self._fsync,
        )

    # -- channels and accounts ---------------------------------------------

    def _new_key(self, taken: set[str]) -> str:
        while True:
            key = "".join(self._rng.choice(KEY_ALPHABET) for _ in range(KEY_LENGTH))
            if key not in taken:
                return key

    def create_channel(self, name: str, field_names: list[str]) -> Channel:
        if not (1 <= len(field_names) <= MAX_FIELDS):
            raise ValueError(f"a channel needs 1 to {MAX_FIELDS} fields")
        if any(not n for n in field_names):
            raise ValueError("field names must be non-empty")
        with self._lock:
            taken = {c.write_key for c in self._channels.values()}
            taken |= {c.read_key for c in self._channels.values()}
            write_key = self._new_key(taken)
            read_key = self._new_key(taken | {write_key})
            channel = Channel(
                id=max(self._channels, default=0) + 1,
                name=name,
                field_names=list(field_names),
                write_key=write_key,
                read_key=read_key,
                created_at=datetime.fromtimestamp(self._clock(), tz=timezone.utc),
                min_update_interval_s=self._min_update_interval_s,
            )
            self._channels[channel.id] = channel
            self._feeds[channel.id] = []
            self._persist_channels()
            return channel

    def create_user(self, username: str, password: str, channel_ids: list[int]) -> UserAccount:
        if not username:
            raise ValueError("username must be non-empty")
        with self._lock:
            if username in self._users:
                raise ValueError(f"username already taken: {username}")
            salt = self._rng.randbytes(16)
            user = UserAccount(username, salt, _digest(password, salt), list(channel_ids))
            self._users[username] = user
            self._persist_users()
            return user

    def channel(self, channel_id: int) -> Channel:
        with self._lock:
            if channel_id not in self._channels:
                raise UnknownChannelError(f"no channel {channel_id}")
            return self._channels[channel_id]

    # -- ingestion ----------------------------------------------------------

    def handle_update(
        self,
        api_key: str,
        field_params: dict[int, float],
        created_at: datetime | None = None,
    ) -> int:
        """Append one feed entry; returns its per-channel entry id.

        The rate limit applies to the entry's effective timestamp (client
        supplied, else server clock): consecutive accepted entries must be at
        least min_update_interval_s apart.
        """
        with self._lock:
            channel = next(
                (c for c in self._channels.values() if c.write_key == api_key), None
            )
            if channel is None:
                raise InvalidKeyError("unknown write key")
            if not field_params:
                raise FieldRangeError("an update needs at least one field value")
            arity = len(channel.field_names)
            for index in field_params:
                if not (1 <= index <= arity):
                    raise FieldRangeError(f"field{index} is outside the channel's {arity} fields")
            when = created_at or datetime.fromtimestamp(self._clock(), tz=timezone.utc)
            feed = self._feeds[channel.id]
            if feed:
                gap = (when - feed[-1].created_at).total_seconds()
                if gap < channel.min_update_interval_s:
                    raise RateLimitedError(
                        f"updates must be {channel.min_update_interval_s} s apart, got {gap}"
                    )
            values: list[float | None] = [None] * arity
            for index, value in field_params.items():
                values[index - 1] = float(value)
            entry = FeedEntry(entry_id=len(feed) + 1, created_at=when, field_values=values)
            feed.append(entry)
            self._persist_entry(channel.id, entry)
            return entry.entry_id

    # -- reads ---------------------------------------------------------------

    def get_feeds(
        self,
        channel_id: int,
        results: int = DEFAULT_FEED_RESULTS,
        read_key: str | None = None,
        token: str | None = None,
    ) -> tuple[Channel, list[FeedEntry]]:
        """The last `results` entries, oldest first. Needs a read key or session."""
        if results < 1:
            raise ValueError("results must be >= 1")
        with self._lock:
            channel = self.channel(channel_id)
            if not self._may_read(channel, read_key, token):
                raise AuthenticationError("a valid read key or owning session is required")
            return channel, list(self._feeds[channel_id][-results:])

    def _may_read(self, channel: Channel, read_key: str | None, token: str | None) -> bool:
        if read_key is not None and hmac.compare_digest(read_key, channel.read_key):
            return True
        if token is not None:
            session = self._sessions.get(token)
            if session is not None:
                username, expires_at = session
                if self._clock() < expires_at:
                    user = self._users.get(username)
                    if user is not None and channel.id in user.channel_ids:
                        return True
        return False

    # -- sessions -------------------------------------------------------------

    def authenticate(self, username: str, password: str) -> str:
        """Login; returns an opaque session token. Failures are uniform."""
        with self._lock:
            user = self._users.get(username)
            salt = user.salt if user is not None else _DUMMY_SALT
            expected = user.password_digest if user is not None else _DUMMY_DIGEST
            ok = hmac.compare_digest(_digest(password, salt), expected) and user is not None
            if not ok:
                raise AuthenticationError("unknown user or wrong password")
            token = "".join(self._rng.choice(TOKEN_ALPHABET) for _ in range(TOKEN_LENGTH))
            self._sessions[token] = (username, self._clock() + self._session_ttl_s)
            return token

    @classmethod
    def load(cls, data_dir: str | Path, **kwargs) -> "TelemetryService":
        """Reconstruct a service from its storage directory."""
        return cls(data_dir=data_dir, **kwargs)
