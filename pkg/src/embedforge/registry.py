"""File-based versioned embedding store.

Layout::

    root/<name>/v<N>/payload.bin
    root/<name>/v<N>/manifest.json
    root/<name>/v<N>/report.json      (optional)

A version directory is assembled under a hidden temporary name and renamed
into place, so readers only ever see complete entries. Publishers of the
same name serialize on ``root/<name>/.lock``, created with ``O_EXCL``.
"""
from __future__ import annotations

import json
import os
import re
import shutil
import struct
import time
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .io import MAGIC, bytes_digest

__all__ = [
    "RegistryEntry",
    "RegistryError",
    "EntryNotFound",
    "CorruptEntry",
    "publish",
    "fetch",
    "list_entries",
    "attach_report",
    "fetch_report",
    "REQUIRED_MANIFEST_KEYS",
]

NAME_RE = re.compile(r"^[A-Za-z0-9_-]+$")
VERSION_RE = re.compile(r"^v([1-9][0-9]*)$")
REQUIRED_MANIFEST_KEYS = ("name", "version", "dim", "count", "kind", "seed", "created_at", "digest")


class RegistryError(RuntimeError):
    pass


class EntryNotFound(RegistryError, LookupError):
    pass


class CorruptEntry(RegistryError):
    pass


@dataclass(frozen=True)
class RegistryEntry:
    name: str
    version: int
    created_at: str
    digest: str
    manifest: dict
    path: Path

    @property
    def has_report(self) -> bool:
        return (self.path / "report.json").exists()

    @property
    def hyperparameters(self) -> dict:
        return {k: v for k, v in self.manifest.items() if k not in REQUIRED_MANIFEST_KEYS}


def _check_name(name: str) -> None:
    if not NAME_RE.match(name or ""):
        raise ValueError(f"invalid entry name {name!r}; expected [A-Za-z0-9_-]+")


def _versions(name_dir: Path) -> list[int]:
    if not name_dir.is_dir():
        return []
    out = []
    for child in name_dir.iterdir():
        m = VERSION_RE.match(child.name)
        if m and (child / "manifest.json").is_file():
            out.append(int(m.group(1)))
    return sorted(out)


def _load_entry(vdir: Path) -> RegistryEntry:
    manifest = json.loads((vdir / "manifest.json").read_text(encoding="utf-8"))
    return RegistryEntry(manifest["name"], int(manifest["version"]), manifest["created_at"],
                         manifest["digest"], manifest, vdir)


def _write_synced(path: Path, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())


def _payload_shape(payload: bytes) -> tuple[int | None, int | None]:
    if payload[:4] == MAGIC and len(payload) >= 16:
        dim, count = struct.unpack_from("<IQ", payload, 4)
        return int(dim), int(count)
    return None, None


class _NameLock:
    def __init__(self, name_dir: Path, timeout: float):
        self.path = name_dir / ".lock"
        self.timeout = timeout

    def __enter__(self):
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(fd, str(os.getpid()).encode())
                os.close(fd)
                return self
            except FileExistsError:
                if time.monotonic() > deadline:
                    raise RegistryError(f"timed out waiting for publish lock {self.path}") from None
                time.sleep(0.02)

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass


def _now_iso() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    ts = float(epoch) if epoch else time.time()
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat(timespec="seconds")


def publish(root, name: str, payload, manifest: dict | None = None, report=None,
            created_at: str | None = None, lock_timeout: float = 30.0) -> RegistryEntry:
    """Store ``payload`` (bytes or a file path) as the next version of ``name``.

    ``manifest`` supplies ``kind``, ``seed`` and any hyperparameters; the
    registry fills in name, version, digest, creation time and, for EMB1
    payloads, ``dim``/``count``. ``report`` may be a ``BenchmarkReport``, a
    dict or JSON text.
    """
    _check_name(name)
    if isinstance(payload, (str, os.PathLike)):
        payload = Path(payload).read_bytes()
    payload = bytes(payload)
    manifest = dict(manifest or {})
    digest = bytes_digest(payload)
    dim, count = _payload_shape(payload)

    root = Path(root)
    name_dir = root / name
    name_dir.mkdir(parents=True, exist_ok=True)
    tmp = name_dir / f".tmp-{uuid.uuid4().hex}"
    try:
        with _NameLock(name_dir, lock_timeout):
            tmp.mkdir()
            _write_synced(tmp / "payload.bin", payload)
            if bytes_digest((tmp / "payload.bin").read_bytes()) != digest:
                raise CorruptEntry(f"payload for {name} failed verification after write")
            if report is not None:
                _write_synced(tmp / "report.json", _report_bytes(report))
            while True:
                version = (_versions(name_dir) or [0])[-1] + 1
                doc = {
                    "kind": "embedding",
                    "seed": None,
                    **manifest,
                    "name": name,
                    "version": version,
                    "dim": manifest.get("dim", dim),
                    "count": manifest.get("count", count),
                    "created_at": created_at or _now_iso(),
                    "digest": digest,
                }
                _write_synced(tmp / "manifest.json", (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
                try:
                    os.rename(tmp, name_dir / f"v{version}")
                    break
                except OSError:
                    if (name_dir / f"v{version}").exists():
                        continue  # lost a race for this number; take the next one
                    raise
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)
    return _load_entry(name_dir / f"v{version}")


def _report_bytes(report) -> bytes:
    if hasattr(report, "to_json"):
        return report.to_json().encode("utf-8")
    if isinstance(report, (str, bytes)):
        return report.encode("utf-8") if isinstance(report, str) else report
    return (json.dumps(report, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _resolve(root, name: str, version) -> Path:
    _check_name(name)
    name_dir = Path(root) / name
    versions = _versions(name_dir)
    if not versions:
        raise EntryNotFound(f"no entry named {name!r}")
    if version in (None, "latest"):
        v = versions[-1]
    else:
        v = int(str(version).lstrip("v"))
        if v not in versions:
            raise EntryNotFound(f"{name!r} has no version {v}")
    return name_dir / f"v{v}"


def fetch(root, name: str, version="latest") -> tuple[bytes, RegistryEntry]:
    """Payload bytes and entry metadata, verified against the recorded digest."""
    vdir = _resolve(root, name, version)
    entry = _load_entry(vdir)
    payload = (vdir / "payload.bin").read_bytes()
    if bytes_digest(payload) != entry.digest:
        raise CorruptEntry(f"{name} v{entry.version}: payload digest mismatch")
    return payload, entry


def fetch_report(root, name: str, version="latest") -> str | None:
    vdir = _resolve(root, name, version)
    path = vdir / "report.json"
    return path.read_text(encoding="utf-8") if path.exists() else None


def attach_report(root, name: str, version, report) -> RegistryEntry:
    """Attach or replace the benchmark report of an existing version."""
    vdir = _resolve(root, name, version)
    tmp = vdir / f".report-{uuid.uuid4().hex}"
    _write_synced(tmp, _report_bytes(report))
    os.replace(tmp, vdir / "report.json")
    return _load_entry(vdir)


def list_entries(root, name: str | None = None) -> list[RegistryEntry]:
    """All complete entries sorted by (name, version)."""
    root = Path(root)
    if not root.is_dir():
        return []
    names = [name] if name is not None else sorted(p.name for p in root.iterdir() if p.is_dir() and NAME_RE.match(p.name))
    out = []
    for n in names:
        for v in _versions(root / n):
            out.append(_load_entry(root / n / f"v{v}"))
    return out
