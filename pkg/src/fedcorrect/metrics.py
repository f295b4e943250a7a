"""Per-round metrics record emitted by the round loop.

Transport fields are per-client sizes (every client downloads the same payload
and uploads an identically shaped gradient); multiply by ``participants`` for
round totals.  The compressed upload size is the lowest-id client's, since
compression makes sizes content-dependent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .errors import DataError


@dataclass
class MetricsRecord:
    round: int
    general_wer: float
    target_wer: float | None
    download_raw_bytes: int
    download_compressed_bytes: int
    upload_raw_bytes: int
    upload_compressed_bytes: int
    peak_memory_bytes: int
    participants: int
    filtered_examples: int
    weight_table_misses: int
    skipped: bool = False
    pool_exhausted: bool = False

    def __post_init__(self):
        byte_fields = (
            self.download_raw_bytes, self.download_compressed_bytes,
            self.upload_raw_bytes, self.upload_compressed_bytes,
            self.peak_memory_bytes,
        )
        if any(b < 0 for b in byte_fields):
            raise DataError("byte counts must be non-negative")
        if self.general_wer < 0:
            raise DataError("general WER must be non-negative")
        if self.target_wer is not None and self.target_wer < 0:
            raise DataError("target WER must be non-negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        return cls(**json.loads(line))
