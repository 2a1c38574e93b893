"""TOML configuration reading/writing.

Configs are plain nested dicts of scalars and lists (two levels: sections of
keys), which keeps the writer tiny; reading uses the stdlib parser
(``tomllib``/``tomli``).  The full merged configuration of every run is
serialized next to its outputs so the run can be reproduced byte for byte.
"""

from __future__ import annotations

from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 fallback
    import tomli as tomllib

from .exceptions import FormatError


def load_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(f"{path}: invalid TOML ({exc})") from exc


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__} to TOML")


def dump_toml(config: dict, path) -> None:
    """Write a {section: {key: scalar-or-list}} dict as TOML."""
    lines = []
    scalars = {k: v for k, v in config.items() if not isinstance(v, dict)}
    sections = {k: v for k, v in config.items() if isinstance(v, dict)}
    for key, value in scalars.items():
        if value is None:
            continue
        lines.append(f"{key} = {_format_value(value)}")
    for name, body in sections.items():
        lines.append("")
        lines.append(f"[{name}]")
        for key, value in body.items():
            if value is None:
                continue
            lines.append(f"{key} = {_format_value(value)}")
    Path(path).write_text("\n".join(lines).strip() + "\n")
