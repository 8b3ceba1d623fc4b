"""Byte-level I/O over local paths and `s3://bucket/key` URIs."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Tuple

from botocore.exceptions import ClientError

import config
from errors import BenchError

logger = logging.getLogger(__name__)


class StorageError(BenchError):
    """Raised when an object cannot be read or written."""


def is_s3(uri: str) -> bool:
    return str(uri).startswith("s3://")


def parse_s3_uri(uri: str) -> Tuple[str, str]:
    if not is_s3(uri):
        raise ValueError("S3 URI must start with s3://")
    path = uri[5:]
    if "/" not in path:
        return path, ""
    bucket, key = path.split("/", 1)
    return bucket, key


def join(root: str, relative: str) -> str:
    """Resolve `relative` against a local directory or S3 prefix."""
    if not root or is_s3(relative) or Path(relative).is_absolute():
        return relative
    if is_s3(root):
        return f"{root.rstrip('/')}/{relative.lstrip('/')}"
    return str(Path(root) / relative)


def absolute(uri: str) -> str:
    """`uri` unchanged for S3, otherwise as an absolute local path."""
    return uri if is_s3(uri) else str(Path(uri).resolve())


def read_bytes(uri: str) -> bytes:
    if is_s3(uri):
        bucket, key = parse_s3_uri(uri)
        try:
            obj = config.get_s3_client().get_object(Bucket=bucket, Key=key)
        except ClientError as exc:
            logger.error("s3_get_object_error", extra={"uri": uri, "error": str(exc)})
            raise StorageError(f"Failed to read {uri}", details={"uri": uri}) from exc
        return obj["Body"].read()
    try:
        return Path(uri).read_bytes()
    except OSError as exc:
        raise StorageError(f"Failed to read {uri}: {exc.strerror}", details={"uri": uri}) from exc


def write_bytes(uri: str, data: bytes) -> None:
    if is_s3(uri):
        bucket, key = parse_s3_uri(uri)
        try:
            config.get_s3_client().put_object(Bucket=bucket, Key=key, Body=data)
        except ClientError as exc:
            logger.error("s3_put_object_error", extra={"uri": uri, "error": str(exc)})
            raise StorageError(f"Failed to write {uri}", details={"uri": uri}) from exc
        return
    path = Path(uri)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise StorageError(f"Failed to write {uri}: {exc.strerror}", details={"uri": uri}) from exc


def read_text(uri: str) -> str:
    return read_bytes(uri).decode("utf-8")


def write_text(uri: str, text: str) -> None:
    write_bytes(uri, text.encode("utf-8"))
