"""Domain schema: entity types, relation types, constraints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .errors import SchemaUnknownError


@dataclass
class EntityType:
    type_name: str
    description: str = ""
    attribute_keys: List[str] = field(default_factory=list)
    fuzzified_placeholder: str = ""


@dataclass
class RelationType:
    relation_name: str
    description: str = ""
    allowed_head_types: List[str] = field(default_factory=list)  # empty = any
    allowed_tail_types: List[str] = field(default_factory=list)


@dataclass
class Schema:
    name: str
    entity_types: List[EntityType] = field(default_factory=list)
    relation_types: List[RelationType] = field(default_factory=list)
    allow_discovered_relations: bool = True

    def __post_init__(self):
        seen = set()
        for et in self.entity_types:
            if et.type_name in seen:
                raise SchemaUnknownError(f"duplicate entity type: {et.type_name}")
            seen.add(et.type_name)
            if not et.fuzzified_placeholder:
                raise SchemaUnknownError(
                    f"entity type {et.type_name} has no fuzzified placeholder"
                )
        seen = set()
        for rt in self.relation_types:
            if rt.relation_name in seen:
                raise SchemaUnknownError(f"duplicate relation type: {rt.relation_name}")
            seen.add(rt.relation_name)

    @property
    def type_names(self) -> List[str]:
        return [et.type_name for et in self.entity_types]

    @property
    def relation_names(self) -> List[str]:
        return [rt.relation_name for rt in self.relation_types]

    def entity_type(self, type_name: str) -> Optional[EntityType]:
        for et in self.entity_types:
            if et.type_name == type_name:
                return et
        return None

    def relation_type(self, relation_name: str) -> Optional[RelationType]:
        for rt in self.relation_types:
            if rt.relation_name == relation_name:
                return rt
        return None

    def placeholder_for(self, type_name: str) -> str:
        et = self.entity_type(type_name)
        return et.fuzzified_placeholder if et else ""


def schema_from_dict(data: Dict) -> Schema:
    ets = [
        EntityType(
            type_name=e["type_name"],
            description=e.get("description", ""),
            attribute_keys=list(e.get("attribute_keys", [])),
            fuzzified_placeholder=e.get("fuzzified_placeholder", ""),
        )
        for e in data.get("entity_types", [])
    ]
    rts = [
        RelationType(
            relation_name=r["relation_name"],
            description=r.get("description", ""),
            allowed_head_types=list(r.get("allowed_head_types", [])),
            allowed_tail_types=list(r.get("allowed_tail_types", [])),
        )
        for r in data.get("relation_types", [])
    ]
    return Schema(
        name=data["name"],
        entity_types=ets,
        relation_types=rts,
        allow_discovered_relations=bool(data.get("allow_discovered_relations", True)),
    )


def load_schema(path) -> Schema:
    with open(Path(path), encoding="utf-8") as fh:
        return schema_from_dict(json.load(fh))
