"""Unified label space over several dataset schemas.

Classes from different datasets are merged only through explicit merge
rules. A class that is stuff in one dataset and thing in another can never
be merged, so both survive as separate joint classes (e.g. two entries
named "pole"). Joint id 0 is reserved for void.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from panoptic_forge.errors import LabelSpaceError
from panoptic_forge.raster import PanopticMap, Segment

STUFF = "stuff"
THING = "thing"
VOID = "void"
CATEGORIES = (STUFF, THING)

SourceKey = Tuple[str, int]


@dataclass(frozen=True)
class ClassDef:
    local_id: int
    name: str
    category: str
    eval_ignore: bool = False


@dataclass(frozen=True)
class DatasetSchema:
    dataset_id: str
    classes: tuple

    def __post_init__(self):
        if not self.dataset_id:
            raise LabelSpaceError("dataset_id must be non-empty")
        classes = tuple(self.classes)
        seen = set()
        for c in classes:
            if c.local_id < 0:
                raise LabelSpaceError(f"{self.dataset_id}: negative local id {c.local_id}")
            if c.local_id in seen:
                raise LabelSpaceError(f"{self.dataset_id}: duplicate local id {c.local_id}")
            if not c.name:
                raise LabelSpaceError(f"{self.dataset_id}: class {c.local_id} has an empty name")
            if c.category not in CATEGORIES:
                raise LabelSpaceError(f"{self.dataset_id}: class {c.local_id} has category {c.category!r}")
            seen.add(c.local_id)
        object.__setattr__(self, "classes", classes)

    def get(self, local_id: int) -> ClassDef:
        for c in self.classes:
            if c.local_id == local_id:
                return c
        raise KeyError(local_id)

    @property
    def counts(self) -> Tuple[int, int]:
        """(things, stuff)"""
        things = sum(c.category == THING for c in self.classes)
        return things, len(self.classes) - things

    def to_json(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "classes": [
                {"id": c.local_id, "name": c.name, "category": c.category, "eval_ignore": c.eval_ignore}
                for c in self.classes
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetSchema":
        classes = []
        for c in doc["classes"]:
            category = c.get("category")
            if category is None and "isthing" in c:
                category = THING if c["isthing"] else STUFF
            classes.append(ClassDef(int(c["id"]), str(c["name"]), category, bool(c.get("eval_ignore", False))))
        return cls(str(doc["dataset_id"]), tuple(classes))


@dataclass(frozen=True)
class MergeRule:
    members: frozenset
    joint_name: str

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset((str(d), int(l)) for d, l in self.members))
        if not self.members:
            raise LabelSpaceError(f"merge rule {self.joint_name!r} has no members")

    def to_json(self) -> dict:
        return {"joint_name": self.joint_name, "members": [list(m) for m in sorted(self.members)]}

    @classmethod
    def from_json(cls, doc: dict) -> "MergeRule":
        return cls(frozenset(tuple(m) for m in doc["members"]), str(doc["joint_name"]))


@dataclass(frozen=True)
class JointEntry:
    joint_id: int
    name: str
    category: str
    sources: tuple  # sorted (dataset_id, local_id) pairs


@dataclass(frozen=True, eq=False)
class JointLabelSpace:
    """Immutable joint taxonomy: entries with ids 1..K and a total remap table."""

    entries: tuple
    remap_table: Dict[SourceKey, int]

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    @property
    def num_things(self) -> int:
        return sum(e.category == THING for e in self.entries)

    @property
    def num_stuff(self) -> int:
        return sum(e.category == STUFF for e in self.entries)

    def entry(self, joint_id: int) -> JointEntry:
        if not 1 <= joint_id <= len(self.entries):
            raise LabelSpaceError(f"joint id {joint_id} outside [1, {len(self.entries)}]")
        return self.entries[joint_id - 1]

    def remap(self, dataset_id: str, local_id: int) -> int:
        try:
            return self.remap_table[(dataset_id, int(local_id))]
        except KeyError:
            raise LabelSpaceError(f"no joint class for ({dataset_id!r}, {local_id})") from None

    def category_of(self, joint_id: int) -> str:
        return category_of(self, joint_id)

    def thing_ids(self) -> List[int]:
        return [e.joint_id for e in self.entries if e.category == THING]

    def stuff_ids(self) -> List[int]:
        return [e.joint_id for e in self.entries if e.category == STUFF]

    def datasets(self) -> List[str]:
        return sorted({d for d, _ in self.remap_table})

    def to_json(self) -> dict:
        return {
            "void_id": 0,
            "entries": [
                {
                    "id": e.joint_id,
                    "name": e.name,
                    "category": e.category,
                    "sources": [list(s) for s in e.sources],
                }
                for e in self.entries
            ],
            "remap": {
                d: {str(l): j for (dd, l), j in sorted(self.remap_table.items()) if dd == d}
                for d in self.datasets()
            },
        }

    def dumps(self) -> bytes:
        return (json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n").encode("utf-8")

    @classmethod
    def from_json(cls, doc: dict) -> "JointLabelSpace":
        entries = tuple(
            JointEntry(int(e["id"]), e["name"], e["category"], tuple(tuple(s) for s in e["sources"]))
            for e in doc["entries"]
        )
        if [e.joint_id for e in entries] != list(range(1, len(entries) + 1)):
            raise LabelSpaceError("joint ids must be contiguous from 1")
        table = {(d, int(l)): int(j) for d, m in doc["remap"].items() for l, j in m.items()}
        for (d, l), j in table.items():
            if not 1 <= j <= len(entries) or (d, l) not in entries[j - 1].sources:
                raise LabelSpaceError(f"remap ({d!r}, {l}) -> {j} disagrees with the entry sources")
        return cls(entries, table)

    @classmethod
    def load(cls, path) -> "JointLabelSpace":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def __eq__(self, other):
        if not isinstance(other, JointLabelSpace):
            return NotImplemented
        return self.entries == other.entries and self.remap_table == other.remap_table

    __hash__ = None


def build_joint_space(schemas: Sequence[DatasetSchema], rules: Iterable[MergeRule] = ()) -> JointLabelSpace:
    """Build the joint space: one entry per rule plus one per unmerged class.

    Entries are ordered by (category, name, first source) and numbered 1..K.
    """
    ids = [s.dataset_id for s in schemas]
    if len(set(ids)) != len(ids):
        raise LabelSpaceError(f"duplicate dataset ids in {ids}")
    classes: Dict[SourceKey, ClassDef] = {}
    for s in schemas:
        for c in s.classes:
            classes[(s.dataset_id, c.local_id)] = c

    groups = []  # (name, category, sources)
    claimed: Dict[SourceKey, str] = {}
    for rule in rules:
        for key in sorted(rule.members):
            if key not in classes:
                raise LabelSpaceError(f"merge rule {rule.joint_name!r} references unknown class {key}")
            if key in claimed:
                raise LabelSpaceError(
                    f"class {key} appears in merge rules {claimed[key]!r} and {rule.joint_name!r}"
                )
            claimed[key] = rule.joint_name
        cats = {classes[k].category for k in rule.members}
        if len(cats) != 1:
            detail = ", ".join(f"{k}={classes[k].category}" for k in sorted(rule.members))
            raise LabelSpaceError(f"merge rule {rule.joint_name!r} mixes stuff and thing classes: {detail}")
        groups.append((rule.joint_name, cats.pop(), tuple(sorted(rule.members))))

    for key in sorted(classes):
        if key not in claimed:
            c = classes[key]
            groups.append((c.name, c.category, (key,)))

    groups.sort(key=lambda g: (g[1], g[0], g[2][0]))
    entries = []
    table = {}
    for joint_id, (name, category, sources) in enumerate(groups, start=1):
        entries.append(JointEntry(joint_id, name, category, sources))
        for key in sources:
            table[key] = joint_id
    return JointLabelSpace(tuple(entries), table)


def category_of(space: JointLabelSpace, joint_id: int) -> str:
    if joint_id == 0:
        return VOID
    return space.entry(joint_id).category


def remap_panoptic(pmap: PanopticMap, dataset_id: str, space: JointLabelSpace) -> PanopticMap:
    """Replace every segment's local class by its joint class; pixels untouched."""
    segs = []
    for s in pmap.segments:
        if (dataset_id, s.class_id) not in space.remap_table:
            raise LabelSpaceError(
                f"segment {s.segment_id} has class {s.class_id}, unknown to dataset {dataset_id!r}"
            )
        segs.append(Segment(s.segment_id, space.remap_table[(dataset_id, s.class_id)], s.area, s.ignore))
    return PanopticMap(pmap.pixels, tuple(segs))


def load_schemas(directory) -> List[DatasetSchema]:
    """Every ``*.json`` schema document in ``directory``, sorted by filename."""
    out = []
    for p in sorted(Path(directory).glob("*.json")):
        out.append(DatasetSchema.from_json(json.loads(p.read_text(encoding="utf-8"))))
    return out


def load_rules(path) -> List[MergeRule]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, dict):
        doc = doc.get("rules", [])
    return [MergeRule.from_json(r) for r in doc]
