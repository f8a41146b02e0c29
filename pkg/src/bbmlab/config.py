"""Run configuration: INI files with a versioned schema key.

Grammar (configparser INI, ``#`` and ``;`` comments, ``key = value``)::

    [meta]
    schema = bbmlab-config/1
    command = solve            # which verb the file is for

    [<command>]                # verb-specific keys, see README
    ...

Lists are comma separated. Every read goes through :class:`RunConfig`,
which turns missing or malformed keys into a ConfigurationError naming the
section, key and line.
"""
from __future__ import annotations

import configparser
import hashlib
import math
import re

from bbmlab.errors import ConfigurationError

SCHEMA = "bbmlab-config/1"
_MISSING = object()


class RunConfig:
    def __init__(self, text: str, source: str = "<config>"):
        self.text = text
        self.source = source
        self._cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        try:
            self._cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigurationError(f"{source}: {exc}") from None
        schema = self._cp.get("meta", "schema", fallback=None)
        if schema is None:
            raise ConfigurationError(f"{source}: missing [meta] schema (expected {SCHEMA})")
        if schema != SCHEMA:
            raise ConfigurationError(f"{source}:{self._line('meta', 'schema')}: unsupported schema {schema!r}")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        return cls(text, str(path))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    @property
    def command(self) -> str | None:
        return self._cp.get("meta", "command", fallback=None)

    def _line(self, section: str, key: str) -> int | str:
        cur = None
        for i, raw in enumerate(self.text.splitlines(), 1):
            s = raw.strip()
            m = re.match(r"\[(.+)\]", s)
            if m:
                cur = m.group(1).strip()
                continue
            if cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s, flags=re.I):
                return i
        return "?"

    def _fail(self, section, key, msg):
        raise ConfigurationError(f"{self.source}:{self._line(section, key)}: [{section}] {key}: {msg}")

    def has(self, section: str, key: str) -> bool:
        return self._cp.has_option(section, key)

    def raw(self, section: str, key: str, default=_MISSING) -> str:
        if not self._cp.has_option(section, key):
            if default is _MISSING:
                raise ConfigurationError(f"{self.source}: missing key [{section}] {key}")
            return default
        return self._cp.get(section, key).strip()

    def get_str(self, section, key, default=_MISSING, choices=None):
        v = self.raw(section, key, default)
        if choices is not None and v not in choices:
            self._fail(section, key, f"{v!r} is not one of {', '.join(choices)}")
        return v

    def get_float(self, section, key, default=_MISSING, positive=False):
        v = self.raw(section, key, default)
        if v is default and default is not _MISSING:
            return default
        try:
            x = float(v)
        except ValueError:
            self._fail(section, key, f"{v!r} is not a number")
        if not math.isfinite(x):
            self._fail(section, key, "must be finite")
        if positive and not x > 0:
            self._fail(section, key, "must be positive")
        return x

    def get_int(self, section, key, default=_MISSING, minimum=None):
        v = self.raw(section, key, default)
        if v is default and default is not _MISSING:
            return default
        try:
            x = int(float(v)) if re.fullmatch(r"\d+(\.0*)?[eE]\d+", v) else int(v)
        except ValueError:
            self._fail(section, key, f"{v!r} is not an integer")
        if minimum is not None and x < minimum:
            self._fail(section, key, f"must be at least {minimum}")
        return x

    def get_floats(self, section, key, default=_MISSING):
        v = self.raw(section, key, default)
        if v is default and default is not _MISSING:
            return default
        out = []
        for part in v.split(","):
            part = part.strip()
            if not part:
                continue
            try:
                out.append(float(part))
            except ValueError:
                self._fail(section, key, f"{part!r} is not a number")
        if not out:
            self._fail(section, key, "empty list")
        return out

    def get_list(self, section, key, default=_MISSING):
        v = self.raw(section, key, default)
        if v is default and default is not _MISSING:
            return default
        return [p.strip() for p in v.split(",") if p.strip()]

    def get_bool(self, section, key, default=_MISSING):
        v = self.raw(section, key, default)
        if isinstance(v, bool):
            return v
        low = v.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        self._fail(section, key, f"{v!r} is not a boolean")

    def require_section(self, section: str):
        if not self._cp.has_section(section):
            raise ConfigurationError(f"{self.source}: missing section [{section}]")
