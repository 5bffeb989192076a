"""Dataset ingestion, filtering, and caption tooling.

Works at the manifest level (JSON-Lines of dataset records): filtering with
per-reason rejection counts, a texture predicate for asset descriptors, and
caption-job construction against a vision-language client, with an offline
mock so the whole pipeline runs without network access.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, runtime_checkable

from .graphs import (NODE_COUNT, DatasetRecord, ParseError, record_from_json,
                     record_to_json, validate)
from .util import canon_json

DEFAULT_CATEGORIES = ("character", "anthropomorphic", "animal", "plant")

UNREADABLE = "UNREADABLE"
CATEGORY = "CATEGORY"
NO_CAPTION = "NO_CAPTION"


@dataclass(frozen=True)
class FilterCriteria:
    min_joints: int = 1
    max_joints: int = 30
    categories: tuple[str, ...] | None = DEFAULT_CATEGORIES
    require_caption: bool = True

    def __post_init__(self):
        if not (1 <= self.min_joints <= self.max_joints):
            raise ValueError("joint bounds must satisfy 1 <= min <= max")


DEFAULT_CRITERIA = FilterCriteria()


def _classify(doc: Mapping, criteria: FilterCriteria
              ) -> tuple[str | None, DatasetRecord | None]:
    """(rejection reason, record) for one raw manifest document.

    The category gate runs on the raw document so off-whitelist categories are
    reported as CATEGORY even when they would not parse as a record."""
    skeleton = doc.get("skeleton")
    if not isinstance(skeleton, Mapping):
        raise ParseError("missing required field 'skeleton'", "")
    if (criteria.categories is not None
            and skeleton.get("category") not in criteria.categories):
        return CATEGORY, None
    rec = record_from_json(doc)
    n = rec.skeleton.n_joints
    if not (criteria.min_joints <= n <= criteria.max_joints):
        return NODE_COUNT, None
    report = validate(rec.skeleton)
    if not report.ok:
        return report.violations[0].code, None
    if criteria.require_caption and not rec.caption.strip():
        return NO_CAPTION, None
    return None, rec


def filter_records(lines: Iterable[str],
                   criteria: FilterCriteria = DEFAULT_CRITERIA,
                   lax: bool = True) -> tuple[list[DatasetRecord], dict]:
    """Filter manifest lines; returns kept records and rejection stats.

    Per-record decisions depend on the record alone, so permuting the input
    permutes the output identically. In lax mode unparseable lines count as
    UNREADABLE; in strict mode they raise.
    """
    kept: list[DatasetRecord] = []
    rejected: dict[str, int] = {}
    total = 0
    for line in lines:
        line = line.strip()
        if not line:
            continue
        total += 1
        rec = None
        try:
            doc = json.loads(line)
            if not isinstance(doc, Mapping):
                raise ParseError("expected a JSON object", "")
            reason, rec = _classify(doc, criteria)
        except (ParseError, json.JSONDecodeError):
            if not lax:
                raise
            reason = UNREADABLE
        if reason is None:
            kept.append(rec)
        else:
            rejected[reason] = rejected.get(reason, 0) + 1
    stats = {"input": total, "kept": len(kept),
             "rejected": dict(sorted(rejected.items()))}
    return kept, stats


def filter_manifest(in_path, out_path,
                    criteria: FilterCriteria = DEFAULT_CRITERIA,
                    lax: bool = True) -> dict:
    with open(in_path, "r", encoding="utf-8") as fh:
        kept, stats = filter_records(fh, criteria, lax)
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in kept:
            fh.write(canon_json(record_to_json(rec)) + "\n")
    return stats


def has_texture(descriptor: Mapping) -> bool:
    """True iff the asset carries vertex colors or at least one texture map."""
    if bool(descriptor.get("vertex_colors")):
        return True
    maps = descriptor.get("texture_maps") or ()
    return len(maps) >= 1


# ---------------------------------------------------------------------------
# Captioning: orthogonal renders + instruction go to a VLM client; the mock
# answers deterministically so offline runs stay reproducible.
# ---------------------------------------------------------------------------

CAPTION_INSTRUCTION = ("Describe the object's identity and pose "
                       "in one short sentence.")


@dataclass(frozen=True)
class CaptionJob:
    record: DatasetRecord
    payload: dict


@runtime_checkable
class VLMClient(Protocol):
    def caption(self, payload: Mapping) -> str: ...


class MockVLMClient:
    """Offline stand-in: answers from the category field instead of looking
    at the renders."""

    def caption(self, payload: Mapping) -> str:
        category = payload.get("category")
        if not category:
            return "an object in a generic pose"
        return f"a {category} in a generic pose"


def caption_request(record: DatasetRecord,
                    renders: Mapping[str, str]) -> CaptionJob:
    """Build the captioning payload: per-view render references plus the
    instruction; category rides along for the offline mock."""
    payload = {
        "views": dict(sorted(renders.items())),
        "instruction": CAPTION_INSTRUCTION,
        "category": record.skeleton.category,
    }
    return CaptionJob(record, payload)


def ingest_caption(job: CaptionJob, response: str,
                   extra_tags: Iterable[str] = ()) -> DatasetRecord:
    """Attach a caption (and any derived tags) to the job's record."""
    if not isinstance(response, str) or not response.strip():
        raise ValueError("caption response is empty")
    rec = job.record
    return DatasetRecord(rec.skeleton, response.strip(),
                         rec.tags + tuple(extra_tags), rec.source_id)
