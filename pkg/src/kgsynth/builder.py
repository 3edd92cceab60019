"""Four-stage knowledge graph construction.

Stage 1 lays down structural nodes (documents, chunks, modal elements, raw
triplets).  Stage 2 runs schema-constrained extraction over every chunk and
modal node.  Stage 3 discovers new relations/entities from entity contexts,
keeping candidates only when a recall check finds supporting information.
Stage 4 merges aliases by embedding similarity plus a chat confirmation,
normalizes relation names the same way, and prunes modal singletons.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import ExtractionParseError, SchemaUnknownError
from .gateway.mock import cosine
from .gateway.types import GatewayBase, user_chat_request
from .ingest import Block, ParsedDocument, RawTriplet, chunk_text, default_continuation
from .model import (
    ASSERTION,
    CHUNK,
    DISCOVERED_LABEL,
    DOCUMENT,
    ENTITY,
    FORMULA,
    IMAGE,
    MODAL_LABEL,
    TABLE,
    AssertionNode,
    ChunkNode,
    DocumentNode,
    EdgeKind,
    EntityNode,
    FormulaNode,
    ImageNode,
    KnowledgeGraph,
    TableNode,
    derive_id,
    entity_type_of,
    validate_graph,
)
from .schema import Schema
from .templates import fill, load_template

logger = logging.getLogger(__name__)

DEFAULT_IMAGE_INSTRUCTION = (
    "Describe the image precisely: layout, named elements, values, and trends."
)

# kinds for entity/assertion edges onto the node they were mined from
_ENT_EDGE_FOR = {CHUNK: EdgeKind.ENT_CHK, IMAGE: EdgeKind.ENT_IMG,
                 TABLE: EdgeKind.ENT_TBL, FORMULA: EdgeKind.ENT_FML}
_ASS_EDGE_FOR = {CHUNK: EdgeKind.ASS_CHK, IMAGE: EdgeKind.ASS_IMG,
                 TABLE: EdgeKind.ASS_TBL, FORMULA: EdgeKind.ASS_FML}
_ELEM_DOC_EDGE = {IMAGE: EdgeKind.IMG_DOC, TABLE: EdgeKind.TBL_DOC,
                  FORMULA: EdgeKind.FML_DOC}


@dataclass
class BuilderConfig:
    separators: List[str] = field(default_factory=lambda: ["\n\n", ". ", "。"])
    max_chars: int = 400
    formula_context_k: int = 2
    cluster_threshold: float = 0.85
    extraction_retries: int = 2
    extraction_temperature: float = 0.2
    max_workers: int = 4
    image_instruction: str = DEFAULT_IMAGE_INSTRUCTION


@dataclass
class BuildCounters:
    extraction_skips: int = 0
    unknown_type_drops: int = 0
    unknown_relation_drops: int = 0
    constraint_drops: int = 0
    unresolved_endpoint_drops: int = 0
    discovery_skips: int = 0
    recall_exclusions: int = 0
    grouping_failures: int = 0
    merged_entities: int = 0
    merged_relations: int = 0
    self_assertions_dropped: int = 0
    pruned_modal_singletons: int = 0

    def as_dict(self) -> Dict[str, int]:
        return dict(self.__dict__)


# --------------------------------------------------------------------------
# parsing of structured model output


def extract_json_object(text: str) -> dict:
    """Pull the outermost balanced JSON object out of possibly chatty text."""
    start = text.find("{")
    if start < 0:
        raise ExtractionParseError(f"no JSON object in reply: {text[:80]!r}")
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                blob = text[start:i + 1]
                try:
                    data = json.loads(blob)
                except json.JSONDecodeError as exc:
                    raise ExtractionParseError(f"unbalanced/invalid JSON: {exc}") from exc
                if not isinstance(data, dict):
                    raise ExtractionParseError("top-level JSON is not an object")
                return data
    raise ExtractionParseError("unterminated JSON object in reply")


@dataclass
class ExtractedEntity:
    name: str
    type_name: str
    desc: str = ""
    attrs: Dict[str, str] = field(default_factory=dict)


@dataclass
class ExtractedAssertion:
    head: str
    relation: str
    tail: str
    desc: str = ""


@dataclass
class ExtractionResult:
    entities: List[ExtractedEntity] = field(default_factory=list)
    assertions: List[ExtractedAssertion] = field(default_factory=list)


def parse_extraction(text: str) -> ExtractionResult:
    data = extract_json_object(text)
    if "entities" not in data or "assertions" not in data:
        raise ExtractionParseError("reply lacks entities/assertions keys")
    entities = []
    for item in data["entities"]:
        if not isinstance(item, dict) or not item.get("name") or not item.get("type"):
            raise ExtractionParseError(f"bad entity record: {item!r}")
        attrs = item.get("attrs") or {}
        if not isinstance(attrs, dict):
            raise ExtractionParseError(f"entity attrs must be an object: {item!r}")
        entities.append(ExtractedEntity(
            name=str(item["name"]).strip(),
            type_name=str(item["type"]).strip(),
            desc=str(item.get("desc") or "").strip(),
            attrs={str(k): str(v) for k, v in attrs.items()},
        ))
    assertions = []
    for item in data["assertions"]:
        if not isinstance(item, dict) or not item.get("head") \
                or not item.get("relation") or not item.get("tail"):
            raise ExtractionParseError(f"bad assertion record: {item!r}")
        assertions.append(ExtractedAssertion(
            head=str(item["head"]).strip(),
            relation=str(item["relation"]).strip(),
            tail=str(item["tail"]).strip(),
            desc=str(item.get("desc") or "").strip(),
        ))
    return ExtractionResult(entities, assertions)


# --------------------------------------------------------------------------
# entity bookkeeping shared by the stages


class _EntityIndex:
    """(name, type) -> node id, plus name -> ids for endpoint resolution."""

    def __init__(self, graph: KnowledgeGraph, schema: Schema):
        self.by_key: Dict[Tuple[str, str], str] = {}
        self.by_name: Dict[str, List[str]] = {}
        type_names = schema.type_names
        for node in graph.nodes_of_type(ENTITY):
            key = (node.name, entity_type_of(node, type_names) or "")
            self.by_key[key] = node.id
            self.by_name.setdefault(node.name, []).append(node.id)
        for ids in self.by_name.values():
            ids.sort()

    def add(self, name: str, type_name: str, node_id: str) -> None:
        self.by_key[(name, type_name)] = node_id
        ids = self.by_name.setdefault(name, [])
        if node_id not in ids:
            ids.append(node_id)
            ids.sort()

    def resolve(self, name: str) -> Optional[str]:
        ids = self.by_name.get(name)
        return ids[0] if ids else None


def _append_src(node, src_id: str) -> None:
    if src_id not in node.src_id_list:
        node.src_id_list.append(src_id)


def _schema_type_lines(schema: Schema) -> str:
    lines = []
    for et in schema.entity_types:
        line = f"- {et.type_name}: {et.description}"
        if et.attribute_keys:
            line += f" (attribute keys: {', '.join(et.attribute_keys)})"
        lines.append(line)
    return "\n".join(lines) or "- (none)"


def _schema_relation_lines(schema: Schema) -> str:
    lines = []
    for rt in schema.relation_types:
        line = f"- {rt.relation_name}: {rt.description}"
        constraints = []
        if rt.allowed_head_types:
            constraints.append(f"head: {'|'.join(rt.allowed_head_types)}")
        if rt.allowed_tail_types:
            constraints.append(f"tail: {'|'.join(rt.allowed_tail_types)}")
        if constraints:
            line += f" ({', '.join(constraints)})"
        lines.append(line)
    return "\n".join(lines) or "- (none)"


# --------------------------------------------------------------------------
# stage 1


def build_stage1(
    parsed_docs: Sequence[ParsedDocument],
    triplet_files: Dict[str, List[RawTriplet]],
    schema: Schema,
    gateway: GatewayBase,
    config: Optional[BuilderConfig] = None,
    counters: Optional[BuildCounters] = None,
) -> KnowledgeGraph:
    config = config or BuilderConfig()
    counters = counters if counters is not None else BuildCounters()
    graph = KnowledgeGraph(schema_name=schema.name)
    for doc in parsed_docs:
        if doc.schema_name and doc.schema_name != schema.name:
            raise SchemaUnknownError(
                f"document {doc.source_path} names schema {doc.schema_name!r}, "
                f"but {schema.name!r} is configured"
            )
        _ingest_document(graph, doc, schema, gateway, config)
    for path in sorted(triplet_files):
        _ingest_triplets(graph, path, triplet_files[path], schema, counters)
    return graph


def _ingest_document(graph, doc, schema, gateway, config) -> None:
    text_blocks = [(i, b) for i, b in enumerate(doc.blocks) if b.kind == "text"]
    content = "\n\n".join(b.content for _, b in text_blocks)
    doc_id = derive_id(DOCUMENT, doc.source_path)
    graph.add_node(DocumentNode(
        id=doc_id, content=content, title=doc.title,
        path=doc.source_path, schema=schema.name,
    ))

    # chunking: split each text block, then merge fragments across block
    # boundaries while the previous fragment lacks terminal punctuation;
    # a merged chunk keeps the first fragment's page index.
    fragments: List[Tuple[str, int, int]] = []  # (text, page_index, block_index)
    for block_index, block in text_blocks:
        for piece in chunk_text(block.content, config.separators, config.max_chars):
            fragments.append((piece, block.page_index, block_index))
    merged: List[Dict] = []
    for text, page, block_index in fragments:
        if merged and default_continuation(merged[-1]["text"]):
            merged[-1]["text"] += text
            merged[-1]["blocks"].append(block_index)
        else:
            merged.append({"text": text, "page": page, "blocks": [block_index]})

    chunk_ids: List[str] = []
    chunk_blocks: List[List[int]] = []
    for ordinal, m in enumerate(merged):
        chunk_id = derive_id(CHUNK, doc_id, str(ordinal), m["text"])
        graph.add_node(ChunkNode(id=chunk_id, content=m["text"], doc_id=doc_id))
        graph.add_edge(chunk_id, doc_id, EdgeKind.CHK_DOC)
        chunk_ids.append(chunk_id)
        chunk_blocks.append(m["blocks"])

    for block_index, block in enumerate(doc.blocks):
        if block.kind == "text":
            continue
        _ingest_element(graph, doc_id, block_index, block, doc,
                        chunk_ids, chunk_blocks, gateway, config)


_CAPTION_REF = re.compile(
    r"(table|figure|fig|eq|equation|formula)\.?\s*\(?\s*(\d+)\s*\)?", re.IGNORECASE
)

_REF_WORDS = {
    IMAGE: ("figure", "fig"),
    TABLE: ("table",),
    FORMULA: ("eq", "equation", "formula"),
}


def _caption_number(caption: str, node_type: str) -> Optional[str]:
    for m in _CAPTION_REF.finditer(caption):
        if m.group(1).lower() in _REF_WORDS[node_type]:
            return m.group(2)
    return None


def _referencing_chunks(node_type: str, caption: str, block_index: int,
                        chunk_ids: List[str], chunk_blocks: List[List[int]],
                        graph) -> List[str]:
    """Chunks that cite the element by caption number; positional fallback to
    the chunk covering the nearest preceding text block."""
    number = _caption_number(caption, node_type)
    if number is not None:
        words = "|".join(_REF_WORDS[node_type])
        pattern = re.compile(rf"\b(?:{words})\.?\s*\(?\s*{re.escape(number)}\s*\)?",
                             re.IGNORECASE)
        matches = [cid for cid in chunk_ids if pattern.search(graph.nodes[cid].content)]
        if matches:
            return matches
    best: Optional[int] = None
    for i, blocks in enumerate(chunk_blocks):
        if any(b < block_index for b in blocks):
            best = i
    if best is None and chunk_ids:
        best = 0  # element precedes all text: fall back to the first chunk
    return [chunk_ids[best]] if best is not None else []


def _ingest_element(graph, doc_id, block_index, block: Block, doc: ParsedDocument,
                    chunk_ids, chunk_blocks, gateway, config) -> None:
    node_type = {"image": IMAGE, "table": TABLE, "formula": FORMULA}[block.kind]
    content = block.content or block.asset_path or block.caption or f"{block.kind} {block_index}"
    node_id = derive_id(node_type, doc_id, str(block_index), content)

    refs = _referencing_chunks(node_type, block.caption, block_index,
                               chunk_ids, chunk_blocks, graph)
    ref_text = "\n".join(graph.nodes[cid].content for cid in refs)

    if node_type == IMAGE:
        if block.asset_path:
            desc = gateway.describe_image(block.asset_path, context=ref_text or block.caption,
                                          instruction=config.image_instruction)
        else:
            desc = block.caption or content
        node = ImageNode(id=node_id, content=content, caption=block.caption,
                         path=block.asset_path or "", desc=desc.strip())
    elif node_type == TABLE:
        prompt = fill(load_template("table_desc"), html=block.content,
                      caption=block.caption, context=ref_text)
        desc = gateway.chat(user_chat_request(
            prompt, temperature=config.extraction_temperature)).text
        node = TableNode(id=node_id, content=content, caption=block.caption,
                         path=block.asset_path or "", desc=desc.strip())
    else:
        k = config.formula_context_k
        lo, hi = max(0, block_index - k), block_index + k + 1
        context = "\n".join(
            b.content for b in doc.blocks[lo:hi] if b.kind == "text" and b.content
        )
        prompt = fill(load_template("formula_desc"), latex=block.content,
                      caption=block.caption, context=context)
        desc = gateway.chat(user_chat_request(
            prompt, temperature=config.extraction_temperature)).text
        node = FormulaNode(id=node_id, content=content, caption=block.caption,
                           desc=desc.strip())

    graph.add_node(node)
    graph.add_edge(node_id, doc_id, _ELEM_DOC_EDGE[node_type])
    for cid in refs:
        graph.add_edge(cid, node_id, EdgeKind.for_types(CHUNK, node_type))


def _ingest_triplets(graph, path: str, triplets: List[RawTriplet],
                     schema: Schema, counters: BuildCounters) -> None:
    if not triplets:
        return
    content = "\n".join(f"{t.head},{t.relation},{t.tail}" for t in triplets)
    doc_id = derive_id(DOCUMENT, path)
    graph.add_node(DocumentNode(
        id=doc_id, content=content, title=Path(path).name,
        path=path, schema=schema.name,
    ))
    index = _EntityIndex(graph, schema)

    def ensure_entity(name: str) -> str:
        existing = index.by_key.get((name, ""))
        if existing is not None:
            _append_src(graph.nodes[existing], doc_id)
            return existing
        node = EntityNode(id=derive_id(ENTITY, name, ""), name=name,
                          src_id_list=[doc_id])
        graph.add_node(node)
        index.add(name, "", node.id)
        return node.id

    for t in triplets:
        labels = set()
        if t.relation not in schema.relation_names:
            if not schema.allow_discovered_relations:
                counters.unknown_relation_drops += 1
                continue
            labels.add(DISCOVERED_LABEL)
        head_id = ensure_entity(t.head)
        tail_id = ensure_entity(t.tail)
        _add_assertion(graph, head_id, t.relation, tail_id,
                       t.desc or f"{t.head} {t.relation} {t.tail}",
                       doc_id, labels, counters, edge_target=None)


def _add_assertion(graph, head_id, relation, tail_id, desc, src_id, labels,
                   counters, edge_target: Optional[str]) -> Optional[str]:
    ass_id = derive_id(ASSERTION, head_id, relation, tail_id)
    node = graph.nodes.get(ass_id)
    if node is None:
        node = AssertionNode(id=ass_id, head=head_id, relation=relation,
                             tail=tail_id, desc=desc, src_id_list=[src_id],
                             labels=set(labels))
        graph.add_node(node)
    else:
        _append_src(node, src_id)
        node.labels |= labels
        if not node.desc:
            node.desc = desc
    graph.add_edge(head_id, tail_id, EdgeKind.ENT_ENT, assertion_id=ass_id)
    if edge_target is not None:
        kind = _ASS_EDGE_FOR[graph.nodes[edge_target].node_type]
        graph.add_edge(ass_id, edge_target, kind)
    return ass_id


# --------------------------------------------------------------------------
# stage 2


def _chat_parsed(gateway, prompt: str, temperature: float, retries: int):
    """Chat and parse; up to 1 + retries attempts, None when all fail."""
    for _ in range(1 + retries):
        reply = gateway.chat(user_chat_request(prompt, temperature=temperature,
                                               expects_structured=True))
        try:
            return extract_json_object(reply.text)
        except ExtractionParseError:
            continue
    return None


def _call_extraction(gateway, prompt: str, temperature: float,
                     retries: int) -> Optional[ExtractionResult]:
    for _ in range(1 + retries):
        reply = gateway.chat(user_chat_request(prompt, temperature=temperature,
                                               expects_structured=True))
        try:
            return parse_extraction(reply.text)
        except ExtractionParseError:
            continue
    return None


def _apply_extraction(graph, result: ExtractionResult, target_id: str,
                      schema: Schema, index: _EntityIndex,
                      counters: BuildCounters, modal: bool) -> None:
    target_type = graph.nodes[target_id].node_type
    local: Dict[str, str] = {}  # extracted name -> node id, this result only
    for ent in result.entities:
        if ent.type_name not in schema.type_names:
            counters.unknown_type_drops += 1
            continue
        et = schema.entity_type(ent.type_name)
        attrs = {k: v for k, v in ent.attrs.items() if k in et.attribute_keys}
        key = (ent.name, ent.type_name)
        node_id = index.by_key.get(key)
        if node_id is not None:
            node = graph.nodes[node_id]
            _append_src(node, target_id)
            if not node.desc and ent.desc:
                node.desc = ent.desc
            for k, v in attrs.items():
                node.attr.setdefault(k, v)
            if modal:
                node.labels.add(MODAL_LABEL)
        else:
            labels = {ent.type_name}
            if modal:
                labels.add(MODAL_LABEL)
            node = EntityNode(id=derive_id(ENTITY, ent.name, ent.type_name),
                              name=ent.name, desc=ent.desc, attr=attrs,
                              src_id_list=[target_id], labels=labels)
            graph.add_node(node)
            index.add(ent.name, ent.type_name, node.id)
            node_id = node.id
        graph.add_edge(node_id, target_id, _ENT_EDGE_FOR[target_type])
        local[ent.name] = node_id

    type_names = schema.type_names
    for ass in result.assertions:
        head_id = local.get(ass.head) or index.resolve(ass.head)
        tail_id = local.get(ass.tail) or index.resolve(ass.tail)
        if head_id is None or tail_id is None:
            counters.unresolved_endpoint_drops += 1
            continue
        labels = set()
        rt = schema.relation_type(ass.relation)
        if rt is None:
            if not schema.allow_discovered_relations:
                counters.unknown_relation_drops += 1
                continue
            labels.add(DISCOVERED_LABEL)
        else:
            head_type = entity_type_of(graph.nodes[head_id], type_names)
            tail_type = entity_type_of(graph.nodes[tail_id], type_names)
            if rt.allowed_head_types and head_type and head_type not in rt.allowed_head_types:
                counters.constraint_drops += 1
                continue
            if rt.allowed_tail_types and tail_type and tail_type not in rt.allowed_tail_types:
                counters.constraint_drops += 1
                continue
        if modal:
            labels.add(MODAL_LABEL)
        _add_assertion(graph, head_id, ass.relation, tail_id, ass.desc,
                       target_id, labels, counters, edge_target=target_id)


def build_stage2(
    graph: KnowledgeGraph,
    schema: Schema,
    gateway: GatewayBase,
    config: Optional[BuilderConfig] = None,
    counters: Optional[BuildCounters] = None,
) -> KnowledgeGraph:
    config = config or BuilderConfig()
    counters = counters if counters is not None else BuildCounters()
    index = _EntityIndex(graph, schema)
    type_lines = _schema_type_lines(schema)
    relation_lines = _schema_relation_lines(schema)
    template = load_template("extraction")

    jobs: List[Tuple[str, bool]] = []  # (target node id, modal?)
    for node in list(graph.nodes.values()):
        if node.node_type == CHUNK:
            jobs.append((node.id, False))
    for node in list(graph.nodes.values()):
        if node.node_type in (IMAGE, TABLE, FORMULA):
            jobs.append((node.id, True))

    def source_text(node_id: str) -> str:
        node = graph.nodes[node_id]
        if node.node_type == CHUNK:
            return node.content
        return (f"content: {node.content}\ncaption: {node.caption}\n"
                f"description: {node.desc}")

    def worker(job: Tuple[str, bool]) -> Optional[ExtractionResult]:
        node_id, _ = job
        prompt = fill(template, entity_types=type_lines,
                      relation_types=relation_lines, source=source_text(node_id))
        return _call_extraction(gateway, prompt, config.extraction_temperature,
                                config.extraction_retries)

    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        results = list(pool.map(worker, jobs))

    # serialized apply step, in source order
    for (node_id, modal), result in zip(jobs, results):
        if result is None:
            counters.extraction_skips += 1
            continue
        _apply_extraction(graph, result, node_id, schema, index, counters, modal)
    return graph


# --------------------------------------------------------------------------
# stage 3


def build_stage3(
    graph: KnowledgeGraph,
    schema: Schema,
    gateway: GatewayBase,
    config: Optional[BuilderConfig] = None,
    counters: Optional[BuildCounters] = None,
) -> KnowledgeGraph:
    config = config or BuilderConfig()
    counters = counters if counters is not None else BuildCounters()
    index = _EntityIndex(graph, schema)
    discovery_template = load_template("discovery")
    recall_template = load_template("recall")

    seeds = sorted(graph.nodes_of_type(ENTITY), key=lambda n: n.id)
    for seed in seeds:
        chunk_ids = [s for s in seed.src_id_list
                     if s in graph.nodes and graph.nodes[s].node_type == CHUNK]
        if not chunk_ids:
            continue
        context = "\n\n".join(graph.nodes[c].content for c in dict.fromkeys(chunk_ids))
        prompt = fill(discovery_template, name=seed.name, desc=seed.desc,
                      context=context)
        data = _chat_parsed(gateway, prompt, config.extraction_temperature,
                            config.extraction_retries)
        if data is None or not isinstance(data.get("assertions"), list):
            counters.discovery_skips += 1
            continue

        for item in data["assertions"]:
            if not isinstance(item, dict):
                continue
            head, relation, tail = (str(item.get("head") or "").strip(),
                                    str(item.get("relation") or "").strip(),
                                    str(item.get("tail") or "").strip())
            desc = str(item.get("desc") or "").strip()
            if not head or not relation or not tail:
                continue
            head_id = index.resolve(head)
            tail_id = index.resolve(tail)
            unknown = [n for n, i in ((head, head_id), (tail, tail_id)) if i is None]
            if len(unknown) > 1:
                counters.unresolved_endpoint_drops += 1
                continue
            labels = {DISCOVERED_LABEL}
            if relation not in schema.relation_names and not schema.allow_discovered_relations:
                counters.unknown_relation_drops += 1
                continue
            if unknown:
                candidate = unknown[0]
                recall = _chat_parsed(
                    gateway,
                    fill(recall_template, name=candidate, context=context),
                    config.extraction_temperature, config.extraction_retries,
                )
                recall_desc = "" if recall is None else str(recall.get("desc") or "").strip()
                if not recall_desc:
                    counters.recall_exclusions += 1
                    continue
                node = EntityNode(id=derive_id(ENTITY, candidate, ""),
                                  name=candidate, desc=recall_desc,
                                  src_id_list=list(dict.fromkeys(chunk_ids)),
                                  labels={DISCOVERED_LABEL})
                if node.id in graph.nodes:  # same candidate from an earlier seed
                    _append_src(graph.nodes[node.id], chunk_ids[0])
                else:
                    graph.add_node(node)
                    index.add(candidate, "", node.id)
                    for cid in dict.fromkeys(chunk_ids):
                        graph.add_edge(node.id, cid, EdgeKind.ENT_CHK)
                head_id = head_id or index.resolve(head)
                tail_id = tail_id or index.resolve(tail)
            _add_assertion(graph, head_id, relation, tail_id, desc,
                           chunk_ids[0], labels, counters, edge_target=chunk_ids[0])
    return graph


# --------------------------------------------------------------------------
# stage 4


def _single_link_groups(ids: List[str], vectors, threshold: float) -> List[List[str]]:
    """Connected components of the >=threshold cosine similarity graph."""
    parent = list(range(len(ids)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            if cosine(vectors[i], vectors[j]) >= threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: Dict[int, List[str]] = {}
    for i, node_id in enumerate(ids):
        groups.setdefault(find(i), []).append(node_id)
    return [sorted(groups[root]) for root in sorted(groups)]


def _confirm_subgroups(gateway, items: List[Tuple[str, str]], config,
                       counters: BuildCounters) -> List[List[str]]:
    """Ask chat to split a similarity group into true-alias subgroups.

    Returns lists of item names; on malformed output the group is left
    unmerged (every item a singleton).
    """
    lines = "\n".join(f"- {name} :: {desc}" for name, desc in items)
    prompt = fill(load_template("grouping"), items=lines)
    data = _chat_parsed(gateway, prompt, config.extraction_temperature,
                        config.extraction_retries)
    names = [name for name, _ in items]
    if data is None or not isinstance(data.get("groups"), list):
        counters.grouping_failures += 1
        return [[n] for n in names]
    valid = set(names)
    seen: set = set()
    subgroups: List[List[str]] = []
    for group in data["groups"]:
        if not isinstance(group, list):
            counters.grouping_failures += 1
            return [[n] for n in names]
        members = [str(g) for g in group if str(g) in valid and str(g) not in seen]
        seen.update(members)
        if members:
            subgroups.append(members)
    for name in names:  # anything the model dropped stays a singleton
        if name not in seen:
            subgroups.append([name])
    return subgroups


def _merge_entities(graph: KnowledgeGraph, member_ids: List[str],
                    counters: BuildCounters) -> str:
    members = sorted(member_ids)
    nodes = [graph.nodes[m] for m in members]

    freq: Dict[str, int] = {}
    for node in nodes:
        freq[node.name] = freq.get(node.name, 0) + len(node.src_id_list)
    best = max(freq.values())
    canonical_name = min(n for n, f in freq.items() if f == best)
    canonical_id = min(n.id for n in nodes if n.name == canonical_name)
    canonical = graph.nodes[canonical_id]
    others = [n for n in nodes if n.id != canonical_id]

    merged_src: List[str] = list(canonical.src_id_list)
    for node in others:
        merged_src.extend(node.src_id_list)  # multiset: duplicates kept
    if not canonical.desc:
        for node in others:
            if node.desc:
                canonical.desc = node.desc
                break
    for node in others:
        for k, v in node.attr.items():
            canonical.attr.setdefault(k, v)
        canonical.labels |= node.labels
    canonical.src_id_list = merged_src

    member_set = set(members)
    for node in graph.nodes_of_type(ASSERTION):
        if node.head in member_set and node.head != canonical_id:
            node.head = canonical_id
        if node.tail in member_set and node.tail != canonical_id:
            node.tail = canonical_id

    for node in others:
        for edge in graph.out_edges(node.id):
            if edge.kind is not EdgeKind.ENT_ENT:
                graph.add_edge(canonical_id, edge.dst, edge.kind)
        graph.remove_node(node.id)

    # restore projection edges for rewired assertions, drop self-loops
    for node in list(graph.nodes_of_type(ASSERTION)):
        if canonical_id not in (node.head, node.tail):
            continue
        if node.head == node.tail:
            counters.self_assertions_dropped += 1
            graph.remove_node(node.id)
            continue
        graph.add_edge(node.head, node.tail, EdgeKind.ENT_ENT, assertion_id=node.id)

    counters.merged_entities += len(others)
    return canonical_id


def _consolidate_assertions(graph: KnowledgeGraph) -> None:
    """Merge assertions that share (head, relation, tail) after rewiring."""
    by_triple: Dict[Tuple[str, str, str], List[str]] = {}
    for node in graph.nodes_of_type(ASSERTION):
        by_triple.setdefault((node.head, node.relation, node.tail), []).append(node.id)
    for triple, ids in sorted(by_triple.items()):
        if len(ids) < 2:
            continue
        ids.sort()
        keeper = graph.nodes[ids[0]]
        for other_id in ids[1:]:
            other = graph.nodes[other_id]
            for src in other.src_id_list:
                _append_src(keeper, src)
            keeper.labels |= other.labels
            if not keeper.desc:
                keeper.desc = other.desc
            for edge in graph.out_edges(other_id):
                graph.add_edge(keeper.id, edge.dst, edge.kind)
            graph.remove_node(other_id)
        graph.add_edge(keeper.head, keeper.tail, EdgeKind.ENT_ENT,
                       assertion_id=keeper.id)


def build_stage4(
    graph: KnowledgeGraph,
    schema: Schema,
    gateway: GatewayBase,
    config: Optional[BuilderConfig] = None,
    counters: Optional[BuildCounters] = None,
) -> KnowledgeGraph:
    config = config or BuilderConfig()
    counters = counters if counters is not None else BuildCounters()

    # (a) entity alias merging
    entities = sorted(graph.nodes_of_type(ENTITY), key=lambda n: n.id)
    if entities:
        texts = [e.desc if e.desc else e.name for e in entities]
        vectors = gateway.embed(texts)
        groups = _single_link_groups([e.id for e in entities], vectors,
                                     config.cluster_threshold)
        for group in groups:
            if len(group) < 2:
                continue
            items = [(graph.nodes[g].name, graph.nodes[g].desc) for g in group]
            by_name: Dict[str, List[str]] = {}
            for g in group:
                by_name.setdefault(graph.nodes[g].name, []).append(g)
            for subgroup in _confirm_subgroups(gateway, items, config, counters):
                ids = sorted({i for name in subgroup for i in by_name.get(name, [])})
                if len(ids) >= 2:
                    _merge_entities(graph, ids, counters)
        _consolidate_assertions(graph)

    # (b) relation name normalization, same cluster-then-confirm procedure
    assertions = graph.nodes_of_type(ASSERTION)
    relation_names = sorted({a.relation for a in assertions})
    if relation_names:
        def relation_text(name: str) -> str:
            rt = schema.relation_type(name)
            return f"{name}: {rt.description}" if rt and rt.description else name

        vectors = gateway.embed([relation_text(r) for r in relation_names])
        groups = _single_link_groups(relation_names, vectors, config.cluster_threshold)
        rename: Dict[str, str] = {}
        for group in groups:
            if len(group) < 2:
                continue
            items = [(name, (schema.relation_type(name).description
                             if schema.relation_type(name) else "")) for name in group]
            for subgroup in _confirm_subgroups(gateway, items, config, counters):
                if len(subgroup) < 2:
                    continue
                counts = {
                    name: sum(1 for a in assertions if a.relation == name)
                    for name in subgroup
                }
                best = max(counts.values())
                canonical = min(n for n, c in counts.items() if c == best)
                for name in subgroup:
                    if name != canonical:
                        rename[name] = canonical
                        counters.merged_relations += 1
        if rename:
            for node in graph.nodes_of_type(ASSERTION):
                if node.relation in rename:
                    node.relation = rename[node.relation]
            _consolidate_assertions(graph)

    # (c) prune modal entities that appear only once
    for node in list(graph.nodes_of_type(ENTITY)):
        if MODAL_LABEL in node.labels and len(node.src_id_list) == 1:
            graph.remove_node(node.id)
            counters.pruned_modal_singletons += 1
    return graph


# --------------------------------------------------------------------------
# orchestration


def build_graph(
    parsed_docs: Sequence[ParsedDocument],
    triplet_files: Dict[str, List[RawTriplet]],
    schema: Schema,
    gateway: GatewayBase,
    config: Optional[BuilderConfig] = None,
    counters: Optional[BuildCounters] = None,
) -> KnowledgeGraph:
    """All four stages with validation between them; the result is frozen."""
    config = config or BuilderConfig()
    counters = counters if counters is not None else BuildCounters()
    graph = build_stage1(parsed_docs, triplet_files, schema, gateway, config, counters)
    _check(graph, "stage1")
    build_stage2(graph, schema, gateway, config, counters)
    _check(graph, "stage2")
    build_stage3(graph, schema, gateway, config, counters)
    _check(graph, "stage3")
    build_stage4(graph, schema, gateway, config, counters)
    _check(graph, "stage4")
    graph.freeze()
    return graph


def _check(graph: KnowledgeGraph, stage: str) -> None:
    report = validate_graph(graph)
    if not report.ok:
        lines = "; ".join(f"{v.rule}@{v.node_id}: {v.message}"
                          for v in report.violations[:5])
        raise RuntimeError(f"graph invalid after {stage}: {lines}")
