"""Built-in dataset presets for the six-dataset joint training setup.

Only class counts and image counts are fixed here. Where real class names
are not needed they are synthesized as ``<dataset>_<category>_<nn>``.
Cityscapes and KITTI use the standard Cityscapes panoptic names, and one
Mapillary Vistas thing class is named "pole" (Cityscapes has pole as stuff).
"""

from typing import Dict, List

from panoptic_forge.label_space import STUFF, THING, ClassDef, DatasetSchema, MergeRule

# (things, stuff)
CLASS_COUNTS: Dict[str, tuple] = {
    "coco": (80, 53),
    "cityscapes": (8, 11),
    "mapillary": (37, 28),
    "viper": (10, 13),
    "wilddash": (13, 12),
    "kitti": (8, 11),
}

JOINT_COUNTS = (109, 77)

WILDDASH_TRAIN_TOTAL = 4256
WILDDASH_TRAIN_RATIO = 0.8

# training images; KITTI "200 training and testing images" is read as 200 training images
TRAIN_SIZES: Dict[str, int] = {
    "coco": 118_000,
    "cityscapes": 2975,
    "mapillary": 18_000,
    "viper": 18_000,
    "wilddash": int(WILDDASH_TRAIN_TOTAL * WILDDASH_TRAIN_RATIO),
    "kitti": 200,
}

MIN_STUFF_AREA: Dict[str, int] = {
    "coco": 512,
    "cityscapes": 2048,
    "mapillary": 2048,
    "viper": 2048,
    "wilddash": 2048,
    "kitti": 2048,
}

MAPILLARY_LONGEST_SIDE = 1920

CITYSCAPES_STUFF = (
    "road", "sidewalk", "building", "wall", "fence", "pole",
    "traffic light", "traffic sign", "vegetation", "terrain", "sky",
)
CITYSCAPES_THINGS = ("person", "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle")


def _synth(dataset, category, n):
    return [f"{dataset}_{category}_{i:02d}" for i in range(n)]


def preset_schema(dataset_id: str) -> DatasetSchema:
    """Schema for one preset dataset. Things get local ids first, then stuff."""
    things, stuff = CLASS_COUNTS[dataset_id]
    if dataset_id in ("cityscapes", "kitti"):
        thing_names, stuff_names = list(CITYSCAPES_THINGS), list(CITYSCAPES_STUFF)
    else:
        thing_names, stuff_names = _synth(dataset_id, THING, things), _synth(dataset_id, STUFF, stuff)
        if dataset_id == "mapillary":
            thing_names[0] = "pole"
    classes = [ClassDef(i + 1, n, THING) for i, n in enumerate(thing_names)]
    classes += [ClassDef(things + i + 1, n, STUFF) for i, n in enumerate(stuff_names)]
    return DatasetSchema(dataset_id, tuple(classes))


def preset_schemas() -> List[DatasetSchema]:
    return [preset_schema(d) for d in CLASS_COUNTS]


def synthetic_merge_rules(thing_merges: int = 47, stuff_merges: int = 51) -> List[MergeRule]:
    """Pairwise rules collapsing ``thing_merges`` thing and ``stuff_merges`` stuff classes.

    Each rule joins one COCO class with one class from a non-COCO dataset,
    so every rule removes exactly one joint class. This is a stand-in used to
    exercise the arithmetic; the historical mapping is not published.
    """
    schemas = {s.dataset_id: s for s in preset_schemas()}
    rules = []
    for category, wanted in ((THING, thing_merges), (STUFF, stuff_merges)):
        coco = [c for c in schemas["coco"].classes if c.category == category]
        others = [
            (d, c)
            for d in CLASS_COUNTS
            if d != "coco"
            for c in schemas[d].classes
            if c.category == category
        ]
        if wanted > min(len(coco), len(others)):
            raise ValueError(f"cannot build {wanted} pairwise {category} merges")
        for i in range(wanted):
            d, c = others[i]
            members = frozenset({("coco", coco[i].local_id), (d, c.local_id)})
            rules.append(MergeRule(members, f"joint_{category}_{i:02d}"))
    return rules
