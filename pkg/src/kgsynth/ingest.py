"""Parsed-document and triplet-file loading plus text chunking.

Documents arrive pre-parsed as JSON (title, source_path, blocks); blocks are
text, image, table (HTML content), or formula (LaTeX content).  Triplet files
are CSV with a ``head,relation,tail[,desc]`` header or a JSON array of
objects with the same keys.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

from .errors import EmptyFieldError, FormatError, MissingAssetError

logger = logging.getLogger(__name__)

BLOCK_KINDS = ("text", "image", "table", "formula")

# Sentence-terminal punctuation, Latin and CJK.
TERMINAL_CHARS = ".!?。！？"


@dataclass
class Block:
    kind: str
    content: str
    caption: str = ""
    page_index: int = 0
    asset_path: Optional[str] = None


@dataclass
class ParsedDocument:
    title: str
    source_path: str
    blocks: List[Block] = field(default_factory=list)
    schema_name: Optional[str] = None


@dataclass
class RawTriplet:
    head: str
    relation: str
    tail: str
    desc: str = ""


def load_parsed_document(path) -> ParsedDocument:
    """Load one parsed document, checking block kinds and asset locators.

    Asset paths are resolved relative to the document file's directory and
    must exist (MissingAsset otherwise).
    """
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError("not valid JSON", path=str(path), line=exc.lineno,
                          offset=exc.pos) from exc
    if not isinstance(data, dict):
        raise FormatError("document must be a JSON object", path=str(path))
    title = data.get("title")
    if not title or not isinstance(title, str):
        raise FormatError("missing or empty title", path=str(path), field="title")
    blocks_raw = data.get("blocks")
    if not isinstance(blocks_raw, list):
        raise FormatError("blocks must be a list", path=str(path), field="blocks")

    blocks: List[Block] = []
    for i, b in enumerate(blocks_raw):
        if not isinstance(b, dict):
            raise FormatError(f"block {i} is not an object", path=str(path), field=f"blocks[{i}]")
        kind = b.get("kind")
        if kind not in BLOCK_KINDS:
            raise FormatError(
                f"block {i} has unknown kind {kind!r}",
                path=str(path), field=f"blocks[{i}].kind",
            )
        content = b.get("content", "")
        if not isinstance(content, str):
            raise FormatError(f"block {i} content must be a string",
                              path=str(path), field=f"blocks[{i}].content")
        asset = b.get("asset_path")
        if asset is not None:
            resolved = (path.parent / asset).resolve()
            if not resolved.is_file():
                raise MissingAssetError(f"{path}: block {i} asset not found: {asset}")
        blocks.append(Block(
            kind=kind,
            content=content,
            caption=b.get("caption") or "",
            page_index=int(b.get("page_index", 0)),
            asset_path=asset,
        ))
    return ParsedDocument(
        title=title,
        source_path=data.get("source_path") or str(path),
        blocks=blocks,
        schema_name=data.get("schema"),
    )


def load_triplets(path) -> List[RawTriplet]:
    """Load raw (head, relation, tail[, desc]) triplets from CSV or JSON."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return _load_triplets_json(path)
    return _load_triplets_csv(path)


def _require(value, column: str, line: int, path: Path) -> str:
    text = (value or "").strip()
    if not text:
        raise EmptyFieldError(f"empty field {column!r}", path=str(path),
                              line=line, field=column)
    return text


def _load_triplets_csv(path: Path) -> List[RawTriplet]:
    out: List[RawTriplet] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty triplet file", path=str(path), line=1)
        header = [h.strip().lower() for h in header]
        if header[:3] != ["head", "relation", "tail"]:
            raise FormatError(
                f"expected header head,relation,tail[,desc], got {','.join(header)}",
                path=str(path), line=1,
            )
        has_desc = len(header) > 3 and header[3] == "desc"
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise FormatError(f"expected at least 3 columns, got {len(row)}",
                                  path=str(path), line=lineno)
            head = _require(row[0], "head", lineno, path)
            relation = _require(row[1], "relation", lineno, path)
            tail = _require(row[2], "tail", lineno, path)
            desc = row[3].strip() if has_desc and len(row) > 3 else ""
            out.append(RawTriplet(head, relation, tail, desc))
    return out


def _load_triplets_json(path: Path) -> List[RawTriplet]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError("not valid JSON", path=str(path), line=exc.lineno,
                          offset=exc.pos) from exc
    if not isinstance(data, list):
        raise FormatError("triplet JSON must be an array", path=str(path))
    out: List[RawTriplet] = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise FormatError(f"triplet {i} is not an object", path=str(path),
                              field=f"[{i}]")
        head = _require(item.get("head"), "head", i, path)
        relation = _require(item.get("relation"), "relation", i, path)
        tail = _require(item.get("tail"), "tail", i, path)
        out.append(RawTriplet(head, relation, tail, (item.get("desc") or "").strip()))
    return out


def chunk_text(text: str, separators: List[str], max_chars: int) -> List[str]:
    """Split ``text`` at separator occurrences and greedily re-merge.

    Separators are retained at the end of the segment they close.  Adjacent
    segments merge while the combined length stays <= max_chars; a single
    segment longer than max_chars passes through unchanged.  Concatenating
    the result always reproduces the input exactly.
    """
    if not text:
        return []
    seps = [s for s in separators if s]
    if not seps:
        segments = [text]
    else:
        pattern = "|".join(re.escape(s) for s in sorted(seps, key=len, reverse=True))
        segments = []
        last = 0
        for m in re.finditer(pattern, text):
            segments.append(text[last:m.end()])
            last = m.end()
        if last < len(text):
            segments.append(text[last:])
        segments = [s for s in segments if s]

    merged: List[str] = []
    current = ""
    for seg in segments:
        if not current:
            current = seg
        elif len(current) + len(seg) <= max_chars:
            current += seg
        else:
            merged.append(current)
            current = seg
    if current:
        merged.append(current)
    return merged


def default_continuation(text: str) -> bool:
    """True when the chunk looks cut off (no terminal punctuation at the end)."""
    stripped = text.rstrip()
    if not stripped:
        return True
    return stripped[-1] not in TERMINAL_CHARS


def merge_cross_boundary_chunks(
    chunks: List[str],
    continuation_predicate: Optional[Callable[[str], bool]] = None,
) -> List[str]:
    """Merge chunks that run across page/column boundaries.

    A chunk for which the predicate returns True (default: does not end in
    terminal punctuation) is concatenated with its successor; the rule applies
    iteratively, so a run of continuations collapses into one chunk.
    """
    pred = continuation_predicate or default_continuation
    out: List[str] = []
    for chunk in chunks:
        if out and pred(out[-1]):
            out[-1] = out[-1] + chunk
        else:
            out.append(chunk)
    return out
