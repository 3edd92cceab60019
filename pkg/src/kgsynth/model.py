"""Typed multimodal knowledge graph: nodes, edges, validation.

Seven node types (document, chunk, entity, assertion, image, table, formula)
and a closed taxonomy of sixteen directed edge kinds.  Entities and assertions
carry provenance in ``src_id_list``; assertions are additionally projected to
entity->entity edges (one edge per assertion, directed head->tail).
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .errors import (
    DuplicateIdError,
    InvalidEdgeKindError,
    InvalidNodeError,
    MissingAssertionError,
)

NodeId = str

DOCUMENT = "document"
CHUNK = "chunk"
ENTITY = "entity"
ASSERTION = "assertion"
IMAGE = "image"
TABLE = "table"
FORMULA = "formula"

NODE_TYPES = (DOCUMENT, CHUNK, ENTITY, ASSERTION, IMAGE, TABLE, FORMULA)

# Node types that participate in task node-count windows.
COUNTABLE_TYPES = (ENTITY, CHUNK, IMAGE, TABLE, FORMULA)

# Reserved label tags; any other label on an entity is its schema type name.
MODAL_LABEL = "modal"
DISCOVERED_LABEL = "discovered"


def derive_id(node_type: str, *parts: str) -> NodeId:
    """Deterministic content-hash id for a node.

    The hash covers the node type plus whatever identifies the node's primary
    content and provenance; callers pick the parts.  Prefixed with a short
    type tag for readability.
    """
    h = hashlib.sha256()
    h.update(node_type.encode("utf-8"))
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode("utf-8"))
    prefix = {
        DOCUMENT: "doc",
        CHUNK: "chk",
        ENTITY: "ent",
        ASSERTION: "ass",
        IMAGE: "img",
        TABLE: "tbl",
        FORMULA: "fml",
    }[node_type]
    return f"{prefix}-{h.hexdigest()[:16]}"


@dataclass
class DocumentNode:
    id: NodeId
    content: str
    title: str
    path: str
    schema: str = ""

    node_type = DOCUMENT


@dataclass
class ChunkNode:
    id: NodeId
    content: str
    doc_id: NodeId

    node_type = CHUNK


@dataclass
class EntityNode:
    id: NodeId
    name: str
    desc: str = ""
    attr: Dict[str, str] = field(default_factory=dict)
    src_id_list: List[NodeId] = field(default_factory=list)
    labels: Set[str] = field(default_factory=set)

    node_type = ENTITY


@dataclass
class AssertionNode:
    id: NodeId
    head: NodeId
    relation: str
    tail: NodeId
    desc: str = ""
    src_id_list: List[NodeId] = field(default_factory=list)
    labels: Set[str] = field(default_factory=set)

    node_type = ASSERTION


@dataclass
class ImageNode:
    id: NodeId
    content: str
    caption: str = ""
    path: str = ""
    desc: str = ""

    node_type = IMAGE


@dataclass
class TableNode:
    id: NodeId
    content: str
    caption: str = ""
    path: str = ""
    desc: str = ""

    node_type = TABLE


@dataclass
class FormulaNode:
    id: NodeId
    content: str
    caption: str = ""
    desc: str = ""

    node_type = FORMULA


Node = object  # any of the dataclasses above

_NODE_CLASSES = {
    DOCUMENT: DocumentNode,
    CHUNK: ChunkNode,
    ENTITY: EntityNode,
    ASSERTION: AssertionNode,
    IMAGE: ImageNode,
    TABLE: TableNode,
    FORMULA: FormulaNode,
}


def node_class_for(node_type: str):
    return _NODE_CLASSES[node_type]


class EdgeKind(enum.Enum):
    """The sixteen permitted (source type, target type) edge kinds."""

    CHK_DOC = "chk->doc"
    CHK_FML = "chk->fml"
    CHK_IMG = "chk->img"
    CHK_TBL = "chk->tbl"
    ENT_CHK = "ent->chk"
    ENT_ENT = "ent->ent"
    ENT_FML = "ent->fml"
    ENT_IMG = "ent->img"
    ENT_TBL = "ent->tbl"
    ASS_CHK = "ass->chk"
    ASS_FML = "ass->fml"
    ASS_IMG = "ass->img"
    ASS_TBL = "ass->tbl"
    FML_DOC = "fml->doc"
    IMG_DOC = "img->doc"
    TBL_DOC = "tbl->doc"

    @property
    def src_type(self) -> str:
        return _EDGE_ENDPOINTS[self][0]

    @property
    def dst_type(self) -> str:
        return _EDGE_ENDPOINTS[self][1]

    @classmethod
    def for_types(cls, src_type: str, dst_type: str) -> "EdgeKind":
        kind = _EDGE_BY_TYPES.get((src_type, dst_type))
        if kind is None:
            raise InvalidEdgeKindError(f"no edge kind connects {src_type} -> {dst_type}")
        return kind


_EDGE_ENDPOINTS = {
    EdgeKind.CHK_DOC: (CHUNK, DOCUMENT),
    EdgeKind.CHK_FML: (CHUNK, FORMULA),
    EdgeKind.CHK_IMG: (CHUNK, IMAGE),
    EdgeKind.CHK_TBL: (CHUNK, TABLE),
    EdgeKind.ENT_CHK: (ENTITY, CHUNK),
    EdgeKind.ENT_ENT: (ENTITY, ENTITY),
    EdgeKind.ENT_FML: (ENTITY, FORMULA),
    EdgeKind.ENT_IMG: (ENTITY, IMAGE),
    EdgeKind.ENT_TBL: (ENTITY, TABLE),
    EdgeKind.ASS_CHK: (ASSERTION, CHUNK),
    EdgeKind.ASS_FML: (ASSERTION, FORMULA),
    EdgeKind.ASS_IMG: (ASSERTION, IMAGE),
    EdgeKind.ASS_TBL: (ASSERTION, TABLE),
    EdgeKind.FML_DOC: (FORMULA, DOCUMENT),
    EdgeKind.IMG_DOC: (IMAGE, DOCUMENT),
    EdgeKind.TBL_DOC: (TABLE, DOCUMENT),
}

# ent->ent is the only kind whose endpoint pair is shared by no other kind, so
# the (src,dst) lookup is unambiguous.
_EDGE_BY_TYPES = {pair: kind for kind, pair in _EDGE_ENDPOINTS.items()}


@dataclass(frozen=True)
class Edge:
    src: NodeId
    dst: NodeId
    kind: EdgeKind
    assertion_id: Optional[NodeId] = None

    def key(self) -> Tuple[str, str, str, str]:
        return (self.src, self.dst, self.kind.value, self.assertion_id or "")


@dataclass(frozen=True)
class Violation:
    rule: str
    node_id: str
    message: str


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class KnowledgeGraph:
    """Mutable during construction, freezable afterwards.

    Maintains out/in adjacency indexes and degree caches; node removal
    cascades to incident edges and, for entities, to their assertions.
    """

    def __init__(self, schema_name: str = ""):
        self.schema_name = schema_name
        self.nodes: Dict[NodeId, Node] = {}
        self._out: Dict[NodeId, List[Edge]] = {}
        self._in: Dict[NodeId, List[Edge]] = {}
        self._edge_keys: Set[Tuple[str, str, str, str]] = set()
        self._out_degree: Dict[NodeId, int] = {}
        self._in_degree: Dict[NodeId, int] = {}
        self._frozen = False

    # -- mutation --

    def _check_mutable(self) -> None:
        if self._frozen:
            raise RuntimeError("graph is frozen")

    def add_node(self, node: Node) -> Node:
        self._check_mutable()
        if node.id in self.nodes:
            raise DuplicateIdError(f"node id already present: {node.id}")
        self._validate_new_node(node)
        self.nodes[node.id] = node
        self._out[node.id] = []
        self._in[node.id] = []
        self._out_degree[node.id] = 0
        self._in_degree[node.id] = 0
        return node

    def _validate_new_node(self, node: Node) -> None:
        ntype = getattr(node, "node_type", None)
        if ntype not in NODE_TYPES:
            raise InvalidNodeError(f"unknown node type: {ntype!r}")
        if not node.id:
            raise InvalidNodeError("node id must be non-empty")
        if ntype == CHUNK:
            if not node.content:
                raise InvalidNodeError(f"chunk {node.id} has empty content")
            if node.doc_id not in self.nodes:
                raise InvalidNodeError(f"chunk {node.id} references unknown document {node.doc_id}")
        elif ntype == ENTITY:
            if not node.name:
                raise InvalidNodeError(f"entity {node.id} has empty name")
            if not node.src_id_list:
                raise InvalidNodeError(f"entity {node.id} has empty src_id_list")
            for src in node.src_id_list:
                if src not in self.nodes:
                    raise InvalidNodeError(f"entity {node.id} references unknown source {src}")
        elif ntype == ASSERTION:
            if not node.src_id_list:
                raise InvalidNodeError(f"assertion {node.id} has empty src_id_list")
            for end, role in ((node.head, "head"), (node.tail, "tail")):
                target = self.nodes.get(end)
                if target is None or target.node_type != ENTITY:
                    raise InvalidNodeError(
                        f"assertion {node.id} {role} does not resolve to an entity: {end}"
                    )
            for src in node.src_id_list:
                if src not in self.nodes:
                    raise InvalidNodeError(f"assertion {node.id} references unknown source {src}")
        elif ntype in (IMAGE, TABLE, FORMULA):
            if not node.content:
                raise InvalidNodeError(f"{ntype} {node.id} has empty content")

    def add_edge(self, src: NodeId, dst: NodeId, kind: EdgeKind,
                 assertion_id: Optional[NodeId] = None) -> Edge:
        self._check_mutable()
        if src not in self.nodes:
            raise InvalidNodeError(f"edge source not in graph: {src}")
        if dst not in self.nodes:
            raise InvalidNodeError(f"edge target not in graph: {dst}")
        if not isinstance(kind, EdgeKind):
            raise InvalidEdgeKindError(f"not an edge kind: {kind!r}")
        if self.nodes[src].node_type != kind.src_type or self.nodes[dst].node_type != kind.dst_type:
            raise InvalidEdgeKindError(
                f"{kind.value} cannot connect {self.nodes[src].node_type} -> "
                f"{self.nodes[dst].node_type}"
            )
        if kind is EdgeKind.ENT_ENT:
            if assertion_id is None:
                raise MissingAssertionError(f"ent->ent edge {src}->{dst} lacks an assertion id")
            backing = self.nodes.get(assertion_id)
            if backing is None or backing.node_type != ASSERTION:
                raise MissingAssertionError(
                    f"ent->ent edge {src}->{dst} cites unknown assertion {assertion_id}"
                )
        edge = Edge(src, dst, kind, assertion_id)
        if edge.key() in self._edge_keys:
            return edge  # idempotent
        self._edge_keys.add(edge.key())
        self._out[src].append(edge)
        self._in[dst].append(edge)
        self._out_degree[src] += 1
        self._in_degree[dst] += 1
        return edge

    def remove_node(self, node_id: NodeId) -> None:
        """Remove a node, its incident edges, and dependent assertions."""
        self._check_mutable()
        if node_id not in self.nodes:
            return
        node = self.nodes[node_id]
        if node.node_type == ENTITY:
            dependents = [
                n.id for n in self.nodes.values()
                if n.node_type == ASSERTION and node_id in (n.head, n.tail)
            ]
            for dep in dependents:
                self.remove_node(dep)
        if node.node_type == ASSERTION:
            projected = [
                e for e in list(self._edge_keys)
                if e[2] == EdgeKind.ENT_ENT.value and e[3] == node_id
            ]
            for key in projected:
                self._drop_edge_key(key)
        if node_id not in self.nodes:
            return  # removed transitively above
        for edge in list(self._out.get(node_id, ())) + list(self._in.get(node_id, ())):
            self._drop_edge_key(edge.key())
        del self.nodes[node_id]
        self._out.pop(node_id, None)
        self._in.pop(node_id, None)
        self._out_degree.pop(node_id, None)
        self._in_degree.pop(node_id, None)

    def _drop_edge_key(self, key: Tuple[str, str, str, str]) -> None:
        if key not in self._edge_keys:
            return
        self._edge_keys.discard(key)
        src, dst = key[0], key[1]
        if src in self._out:
            kept = [e for e in self._out[src] if e.key() != key]
            self._out_degree[src] -= len(self._out[src]) - len(kept)
            self._out[src] = kept
        if dst in self._in:
            kept = [e for e in self._in[dst] if e.key() != key]
            self._in_degree[dst] -= len(self._in[dst]) - len(kept)
            self._in[dst] = kept

    def freeze(self) -> None:
        self._frozen = True

    @property
    def frozen(self) -> bool:
        return self._frozen

    # -- access --

    def edges(self) -> List[Edge]:
        out: List[Edge] = []
        for node_id in self.nodes:
            out.extend(self._out[node_id])
        return out

    def out_edges(self, node_id: NodeId) -> List[Edge]:
        return list(self._out.get(node_id, ()))

    def in_edges(self, node_id: NodeId) -> List[Edge]:
        return list(self._in.get(node_id, ()))

    def out_degree(self, node_id: NodeId) -> int:
        return self._out_degree.get(node_id, 0)

    def in_degree(self, node_id: NodeId) -> int:
        return self._in_degree.get(node_id, 0)

    def neighbors(self, node_id: NodeId) -> List[NodeId]:
        """Undirected neighbor ids, sorted, without duplicates."""
        seen = set()
        for e in self._out.get(node_id, ()):
            seen.add(e.dst)
        for e in self._in.get(node_id, ()):
            seen.add(e.src)
        seen.discard(node_id)
        return sorted(seen)

    def nodes_of_type(self, node_type: str) -> List[Node]:
        return [n for n in self.nodes.values() if n.node_type == node_type]

    def edges_between(self, a: NodeId, b: NodeId) -> List[Edge]:
        """All edges connecting a and b in either stored direction, sorted."""
        found = [e for e in self._out.get(a, ()) if e.dst == b]
        found += [e for e in self._out.get(b, ()) if e.dst == a]
        return sorted(found, key=Edge.key)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.schema_name == other.schema_name
            and self.nodes == other.nodes
            and sorted(self._edge_keys) == sorted(other._edge_keys)
        )


def validate_graph(graph: KnowledgeGraph) -> ValidationReport:
    """Structural validation; returns a deterministic report (sorted findings).

    Checks id uniqueness is implied by the container; verifies edge endpoint
    types against the kind taxonomy, adjacency/degree consistency, provenance
    resolution, and assertion backing of ent->ent edges.
    """
    violations: List[Violation] = []

    def flag(rule: str, node_id: str, message: str) -> None:
        violations.append(Violation(rule, node_id, message))

    for node_id, node in graph.nodes.items():
        if node.id != node_id:
            flag("id-mismatch", node_id, f"indexed under {node_id} but id is {node.id}")
        ntype = getattr(node, "node_type", None)
        if ntype not in NODE_TYPES:
            flag("invalid-node", node_id, f"unknown node type {ntype!r}")
            continue
        if ntype == CHUNK:
            doc = graph.nodes.get(node.doc_id)
            if doc is None or doc.node_type != DOCUMENT:
                flag("dangling-ref", node_id, f"chunk doc_id {node.doc_id} unresolved")
            if not node.content:
                flag("invalid-node", node_id, "chunk content empty")
        elif ntype in (ENTITY, ASSERTION):
            if not node.src_id_list:
                flag("invalid-node", node_id, f"{ntype} src_id_list empty")
            for src in node.src_id_list:
                if src not in graph.nodes:
                    flag("dangling-ref", node_id, f"src id {src} unresolved")
            if ntype == ASSERTION:
                for end, role in ((node.head, "head"), (node.tail, "tail")):
                    target = graph.nodes.get(end)
                    if target is None or target.node_type != ENTITY:
                        flag("dangling-ref", node_id, f"assertion {role} {end} is not an entity")
        elif ntype in (IMAGE, TABLE, FORMULA):
            if not node.content:
                flag("invalid-node", node_id, f"{ntype} content empty")

    for edge in graph.edges():
        src = graph.nodes.get(edge.src)
        dst = graph.nodes.get(edge.dst)
        if src is None or dst is None:
            flag("dangling-edge", edge.src, f"edge {edge.key()} has a missing endpoint")
            continue
        if not isinstance(edge.kind, EdgeKind):
            flag("invalid-edge-kind", edge.src, f"edge {edge.key()} kind not in taxonomy")
            continue
        if src.node_type != edge.kind.src_type or dst.node_type != edge.kind.dst_type:
            flag(
                "invalid-edge-kind",
                edge.src,
                f"{edge.kind.value} cannot connect {src.node_type} -> {dst.node_type}",
            )
        if edge.kind is EdgeKind.ENT_ENT:
            backing = graph.nodes.get(edge.assertion_id or "")
            if backing is None or backing.node_type != ASSERTION:
                flag("missing-assertion", edge.src,
                     f"ent->ent edge {edge.src}->{edge.dst} cites {edge.assertion_id}")

    # adjacency index / degree cache consistency
    for node_id in graph.nodes:
        if graph.out_degree(node_id) != len(graph.out_edges(node_id)):
            flag("degree-cache", node_id, "out-degree cache disagrees with adjacency")
        if graph.in_degree(node_id) != len(graph.in_edges(node_id)):
            flag("degree-cache", node_id, "in-degree cache disagrees with adjacency")

    violations.sort(key=lambda v: (v.node_id, v.rule, v.message))
    return ValidationReport(violations)


def entity_type_of(node: EntityNode, type_names: Iterable[str]) -> Optional[str]:
    """The entity's schema type, recovered from its label tags."""
    names = set(type_names)
    for label in sorted(node.labels):
        if label in names:
            return label
    return None
