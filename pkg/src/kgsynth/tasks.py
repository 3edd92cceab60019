"""Task configurations and the 32 built-in sampling presets.

A task pins node-count windows over the five countable node types
(entity, chunk, image, table, formula), traversal limits and constraints,
the question template, and the fuzzify/pronoun toggles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import ConfigError
from .model import CHUNK, COUNTABLE_TYPES, ENTITY, FORMULA, IMAGE, TABLE, EdgeKind
from .templates import QA_TEMPLATES

CountRange = Tuple[int, Optional[int]]  # (min, max); max None = unbounded

# traversal sticks to entity/chunk/image/table/formula nodes by default
DEFAULT_TRAVERSAL_KINDS = (
    EdgeKind.ENT_ENT,
    EdgeKind.ENT_CHK,
    EdgeKind.ENT_IMG,
    EdgeKind.ENT_TBL,
    EdgeKind.ENT_FML,
    EdgeKind.CHK_IMG,
    EdgeKind.CHK_TBL,
    EdgeKind.CHK_FML,
)


@dataclass
class StartCriteria:
    node_types: List[str] = field(default_factory=lambda: [ENTITY])
    min_out_degree: int = 0
    attribute_filters: Dict[str, str] = field(default_factory=dict)


@dataclass
class NeighborConstraints:
    allowed_kinds: List[EdgeKind] = field(
        default_factory=lambda: list(DEFAULT_TRAVERSAL_KINDS))
    min_degree: int = 0
    max_degree: Optional[int] = None
    attribute_filters: Dict[str, str] = field(default_factory=dict)


@dataclass
class TaskConfig:
    task_name: str
    template: str = "open_qa"
    required_node_counts: Dict[str, CountRange] = field(default_factory=dict)
    max_depth: int = 4
    max_nodes: int = 5
    start_criteria: StartCriteria = field(default_factory=StartCriteria)
    neighbor_constraints: NeighborConstraints = field(default_factory=NeighborConstraints)
    fuzzify: bool = False
    pronoun_substitute: bool = False
    samples_requested: int = 10

    def __post_init__(self):
        if self.template not in QA_TEMPLATES:
            raise ConfigError("template", f"unknown template: {self.template}")
        if self.max_nodes < 1:
            raise ConfigError("max_nodes", "must be >= 1")
        if self.max_depth < 0:
            raise ConfigError("max_depth", "must be >= 0")
        for node_type, (lo, hi) in self.required_node_counts.items():
            if node_type not in COUNTABLE_TYPES:
                raise ConfigError("required_node_counts",
                                  f"uncountable node type: {node_type}")
            if lo < 0 or (hi is not None and hi < lo):
                raise ConfigError("required_node_counts",
                                  f"bad window for {node_type}: ({lo}, {hi})")
        mins = sum(lo for lo, _ in self.required_node_counts.values())
        if mins > self.max_nodes:
            raise ConfigError("required_node_counts",
                              f"minimums ({mins}) exceed max_nodes ({self.max_nodes})")

    def window(self, node_type: str) -> CountRange:
        return self.required_node_counts.get(node_type, (0, None))


def _preset(name: str, counts: Dict[str, CountRange], depth: int) -> TaskConfig:
    full = {t: counts.get(t, (0, None)) for t in COUNTABLE_TYPES}
    return TaskConfig(
        task_name=name,
        required_node_counts=full,
        max_depth=depth,
        max_nodes=depth + 1,
    )


_UNB = None  # unbounded maximum, for readability below


def _modal_family(modal: str, single: str, multi: str) -> List[TaskConfig]:
    """The seven-task family shared by table/formula/image-centric presets."""
    zero_others = {t: (0, 0) for t in (CHUNK, IMAGE, TABLE, FORMULA) if t != modal}
    return [
        _preset(f"{single} QA", {**zero_others, modal: (1, 1)}, 2),
        _preset(f"{single} Multi-hop QA",
                {**zero_others, modal: (1, 1), ENTITY: (2, _UNB)}, 4),
        _preset(f"{single} & Single-Chunk (Text) QA",
                {**zero_others, modal: (1, 1), CHUNK: (1, 1)}, 2),
        _preset(f"{single} & Multi-Chunk (Text) QA",
                {**zero_others, modal: (1, 1), CHUNK: (2, _UNB)}, 4),
        _preset(f"{multi} QA", {**zero_others, modal: (2, _UNB)}, 4),
        _preset(f"{multi} Multi-hop QA",
                {**zero_others, modal: (2, _UNB), ENTITY: (2, _UNB)}, 4),
        _preset(f"{multi} & Multi-Chunk (Text) QA",
                {**zero_others, modal: (2, _UNB), CHUNK: (2, _UNB)}, 4),
    ]


def _cross_pair(a: str, b: str, name: str) -> List[TaskConfig]:
    others = {t: (0, 0) for t in (CHUNK, IMAGE, TABLE, FORMULA) if t not in (a, b)}
    return [
        _preset(f"{name} QA", {**others, a: (1, 1), b: (1, 1)}, 3),
        _preset(f"{name} Multi-hop QA",
                {**others, a: (1, 1), b: (1, 1), ENTITY: (2, _UNB)}, 4),
    ]


def load_task_presets() -> List[TaskConfig]:
    """The 32 built-in task presets, grouped by carrier modality."""
    no_modal = {IMAGE: (0, 0), TABLE: (0, 0), FORMULA: (0, 0)}
    presets: List[TaskConfig] = []
    # table-centric (7)
    presets += _modal_family(TABLE, "Single-Table", "Multi-Table")
    # text-only (4)
    presets += [
        _preset("Single-Chunk (Text) QA", {**no_modal, CHUNK: (1, 1)}, 2),
        _preset("Multi-Chunk (Text) QA", {**no_modal, CHUNK: (2, _UNB)}, 4),
        _preset("Single-Chunk (Text) Multi-hop QA",
                {**no_modal, CHUNK: (1, 1), ENTITY: (2, _UNB)}, 4),
        _preset("Multi-Chunk (Text) Multi-hop QA",
                {**no_modal, CHUNK: (2, _UNB), ENTITY: (2, _UNB)}, 4),
    ]
    # formula-centric (7), image-centric (7)
    presets += _modal_family(FORMULA, "Single-Formula", "Multi-formula")
    presets += _modal_family(IMAGE, "Single Image", "Multi-Image")
    # cross-modality (6)
    presets += _cross_pair(TABLE, IMAGE, "Single-Table & Single Image")
    presets += _cross_pair(TABLE, FORMULA, "Single-Table & Single-Formula")
    presets += _cross_pair(IMAGE, FORMULA, "Single Image & Single-Formula")
    # entity-centric (1): entities only on the path
    presets.append(_preset(
        "Pure Entity Multi-hop QA",
        {CHUNK: (0, 0), IMAGE: (0, 0), TABLE: (0, 0), FORMULA: (0, 0),
         ENTITY: (2, _UNB)},
        4,
    ))
    return presets


def get_preset(name: str) -> TaskConfig:
    for preset in load_task_presets():
        if preset.task_name == name:
            return preset
    raise ConfigError("preset", f"unknown task preset: {name}")


def task_from_config(entry: Dict) -> TaskConfig:
    """Build a TaskConfig from a config mapping.

    Either ``{"preset": name, **overrides}`` or a full task spec with
    ``task_name``.  Count windows come as ``{type: [min, max-or-null]}``.
    """
    if not isinstance(entry, dict):
        raise ConfigError("sampling.tasks", f"task entry must be a mapping: {entry!r}")
    entry = dict(entry)
    preset_name = entry.pop("preset", None)
    if preset_name is not None:
        task = get_preset(preset_name)
    elif "task_name" in entry:
        task = TaskConfig(task_name=entry.pop("task_name"))
    else:
        raise ConfigError("sampling.tasks", "task entry needs preset or task_name")

    if "required_node_counts" in entry:
        counts = {}
        for node_type, window in entry.pop("required_node_counts").items():
            lo, hi = window
            counts[node_type] = (int(lo), None if hi is None else int(hi))
        task.required_node_counts = {t: counts.get(t, task.window(t))
                                     for t in COUNTABLE_TYPES}
    if "start_criteria" in entry:
        sc = entry.pop("start_criteria")
        task.start_criteria = StartCriteria(
            node_types=list(sc.get("node_types", task.start_criteria.node_types)),
            min_out_degree=int(sc.get("min_out_degree", 0)),
            attribute_filters=dict(sc.get("attribute_filters", {})),
        )
    if "neighbor_constraints" in entry:
        nc = entry.pop("neighbor_constraints")
        kinds = nc.get("allowed_kinds")
        task.neighbor_constraints = NeighborConstraints(
            allowed_kinds=([EdgeKind(k) for k in kinds] if kinds
                           else list(DEFAULT_TRAVERSAL_KINDS)),
            min_degree=int(nc.get("min_degree", 0)),
            max_degree=(None if nc.get("max_degree") is None
                        else int(nc["max_degree"])),
            attribute_filters=dict(nc.get("attribute_filters", {})),
        )
    for key in ("template", "max_depth", "max_nodes", "fuzzify",
                "pronoun_substitute", "samples_requested"):
        if key in entry:
            setattr(task, key, entry.pop(key))
    if entry:
        raise ConfigError("sampling.tasks", f"unknown task keys: {sorted(entry)}")
    task.__post_init__()  # re-validate after overrides
    return task
