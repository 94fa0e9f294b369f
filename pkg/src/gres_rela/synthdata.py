"""Deterministic miniature GRES corpus built from shapes scenes.

Each sample is a rendered scene of non-overlapping colored shapes, a
templated expression that refers to zero, one or several objects, and the
exact union mask of the referred objects. Every expression carries its
meaning as a small predicate over object subsets, and generation is only
accepted when exhaustive enumeration of all subsets finds exactly the
intended target set (or, for no-target kinds, no object matching the
description at all).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import GenerationError, InputError, SkipSignal

SHAPES = ("circle", "square", "triangle")
COLORS = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "white": (255, 255, 255),
    "black": (0, 0, 0),
}
BACKGROUND = (128, 128, 128)
NUMBER_WORDS = {2: "two", 3: "three", 4: "four", 5: "five", 6: "six"}
SIDES = ("left", "right", "top", "bottom")
SIDE_PHRASE = {"left": "on the left", "right": "on the right", "top": "at the top", "bottom": "at the bottom"}
RELATIONS = {"left": "left of", "right": "right of", "above": "above", "below": "below"}

SINGLE_KINDS = ("single",)
MULTI_KINDS = ("counting", "compound_and", "compound_except", "shared_attr", "relational")
NO_TARGET_KINDS = ("no_target_absent", "no_target_deceptive")
ALL_KINDS = SINGLE_KINDS + MULTI_KINDS + NO_TARGET_KINDS
MAX_PLACEMENT_ATTEMPTS = 1000
MIN_OBJECTS, MAX_OBJECTS = 2, 6


# ---------------------------------------------------------------- scenes


@dataclass(frozen=True)
class ObjectSpec:
    id: int
    shape: str
    color: str
    cx: int
    cy: int
    size: int

    @property
    def center(self) -> tuple[int, int]:
        return (self.cx, self.cy)


@dataclass(frozen=True)
class SceneConfig:
    height: int = 48
    width: int = 48
    min_objects: int = 2
    max_objects: int = 4
    min_size: int = 5
    max_size: int = 8
    gap: int = 1

    def __post_init__(self):
        if not MIN_OBJECTS <= self.min_objects <= self.max_objects <= MAX_OBJECTS:
            raise InputError(
                f"object count range {self.min_objects}..{self.max_objects} must lie within {MIN_OBJECTS}..{MAX_OBJECTS}"
            )
        if not 1 <= self.min_size <= self.max_size:
            raise InputError(f"bad size range {self.min_size}..{self.max_size}")
        if 2 * self.max_size + 1 > min(self.height, self.width):
            raise InputError("objects of the largest size do not fit on the canvas")


@dataclass(frozen=True)
class Scene:
    height: int
    width: int
    objects: tuple[ObjectSpec, ...]
    seed: int

    def by_id(self, oid: int) -> ObjectSpec:
        for o in self.objects:
            if o.id == oid:
                return o
        raise InputError(f"scene has no object with id {oid}")

    @property
    def ids(self) -> frozenset[int]:
        return frozenset(o.id for o in self.objects)


def object_mask(obj: ObjectSpec, height: int, width: int) -> np.ndarray:
    """Exact rasterization, sampling each pixel at its integer (x=col, y=row) position."""
    ys, xs = np.mgrid[0:height, 0:width]
    dx, dy, s = xs - obj.cx, ys - obj.cy, obj.size
    if obj.shape == "circle":
        return dx * dx + dy * dy <= s * s
    if obj.shape == "square":
        return (np.abs(dx) <= s) & (np.abs(dy) <= s)
    if obj.shape == "triangle":
        # apex (cx, cy - s); base from (cx - s, cy + s) to (cx + s, cy + s)
        return (dy <= s) & (2 * np.abs(dx) <= dy + s)
    raise InputError(f"unknown shape {obj.shape!r}")


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> Scene:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(config.min_objects, config.max_objects + 1))
    attempts = 0
    while True:
        objects: list[ObjectSpec] = []
        boxes: list[tuple[int, int, int, int]] = []
        while len(objects) < n:
            attempts += 1
            if attempts > MAX_PLACEMENT_ATTEMPTS:
                raise GenerationError(f"could not place {n} objects for seed {seed}")
            size = int(rng.integers(config.min_size, config.max_size + 1))
            shape = SHAPES[int(rng.integers(len(SHAPES)))]
            color = list(COLORS)[int(rng.integers(len(COLORS)))]
            cx = int(rng.integers(size, config.width - size))
            cy = int(rng.integers(size, config.height - size))
            box = (cx - size, cy - size, cx + size, cy + size)
            g = config.gap
            if any(
                box[0] <= b[2] + g and b[0] <= box[2] + g and box[1] <= b[3] + g and b[1] <= box[3] + g
                for b in boxes
            ):
                continue
            objects.append(ObjectSpec(len(objects), shape, color, cx, cy, size))
            boxes.append(box)
        if len({(o.shape, o.color) for o in objects}) >= 2:
            return Scene(config.height, config.width, tuple(objects), seed)


def render(scene: Scene) -> np.ndarray:
    img = np.empty((scene.height, scene.width, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for o in scene.objects:
        img[object_mask(o, scene.height, scene.width)] = COLORS[o.color]
    return img


def rasterize_mask(scene: Scene, target_ids) -> np.ndarray:
    out = np.zeros((scene.height, scene.width), dtype=bool)
    for oid in sorted(target_ids):
        out |= object_mask(scene.by_id(oid), scene.height, scene.width)
    return out


# ---------------------------------------------------------------- expression semantics


@dataclass(frozen=True)
class Desc:
    color: str | None = None
    shape: str | None = None
    side: str | None = None

    def matches(self, o: ObjectSpec, scene: Scene) -> bool:
        if self.color is not None and o.color != self.color:
            return False
        if self.shape is not None and o.shape != self.shape:
            return False
        if self.side is not None and not on_side(o, self.side, scene):
            return False
        return True

    def matching(self, scene: Scene) -> list[ObjectSpec]:
        return [o for o in scene.objects if self.matches(o, scene)]

    def phrase(self, plural: bool = False) -> str:
        noun = self.shape or "shape"
        if plural:
            noun += "s"
        words = ([self.color] if self.color else []) + [noun]
        if self.side:
            words.append(SIDE_PHRASE[self.side])
        return " ".join(words)


def on_side(o: ObjectSpec, side: str, scene: Scene) -> bool:
    if side == "left":
        return 2 * o.cx < scene.width
    if side == "right":
        return 2 * o.cx >= scene.width
    if side == "top":
        return 2 * o.cy < scene.height
    if side == "bottom":
        return 2 * o.cy >= scene.height
    raise InputError(f"unknown side {side!r}")


def related(o: ObjectSpec, rel: str, ref: ObjectSpec) -> bool:
    if rel == "left":
        return o.cx < ref.cx
    if rel == "right":
        return o.cx > ref.cx
    if rel == "above":
        return o.cy < ref.cy
    if rel == "below":
        return o.cy > ref.cy
    raise InputError(f"unknown relation {rel!r}")


class Expr:
    """A referring expression: surface text plus a predicate over object subsets."""

    def text(self) -> str:
        raise NotImplementedError

    def satisfied_by(self, subset: frozenset[int], scene: Scene) -> bool:
        raise NotImplementedError

    def descriptors(self) -> list[Desc]:
        return []


@dataclass(frozen=True)
class Definite(Expr):
    """``the D``: exactly one object fits D."""

    desc: Desc

    def text(self) -> str:
        return f"the {self.desc.phrase()}"

    def satisfied_by(self, subset, scene):
        if len(subset) != 1:
            return False
        return all(self.desc.matches(o, scene) == (o.id in subset) for o in scene.objects)

    def descriptors(self):
        return [self.desc]


@dataclass(frozen=True)
class Extreme(Expr):
    """``the D on the far left/right``: the fitting object with the smallest/largest x."""

    desc: Desc
    direction: str

    def text(self) -> str:
        return f"the {self.desc.phrase()} on the far {self.direction}"

    def satisfied_by(self, subset, scene):
        if len(subset) != 1:
            return False
        (oid,) = subset
        chosen = scene.by_id(oid)
        if not self.desc.matches(chosen, scene):
            return False
        for o in self.desc.matching(scene):
            if o.id == oid:
                continue
            better = o.cx < chosen.cx if self.direction == "left" else o.cx > chosen.cx
            if better or (o.cx == chosen.cx and o.id < oid):
                return False
        return True

    def descriptors(self):
        return [self.desc]


@dataclass(frozen=True)
class Counted(Expr):
    """``the K Ds``: exactly K objects fit D and the subset is all of them."""

    desc: Desc
    k: int

    def text(self) -> str:
        return f"the {NUMBER_WORDS[self.k]} {self.desc.phrase(plural=True)}"

    def satisfied_by(self, subset, scene):
        if len(subset) != self.k:
            return False
        return all(self.desc.matches(o, scene) == (o.id in subset) for o in scene.objects)

    def descriptors(self):
        return [self.desc]


def _splits(subset: frozenset[int]):
    items = sorted(subset)
    for r in range(len(items) + 1):
        for left in itertools.combinations(items, r):
            a = frozenset(left)
            yield a, subset - a


@dataclass(frozen=True)
class And(Expr):
    first: Expr
    second: Expr

    def text(self) -> str:
        return f"{self.first.text()} and {self.second.text()}"

    def satisfied_by(self, subset, scene):
        return any(
            a and b and self.first.satisfied_by(a, scene) and self.second.satisfied_by(b, scene)
            for a, b in _splits(subset)
        )

    def descriptors(self):
        return self.first.descriptors() + self.second.descriptors()


@dataclass(frozen=True)
class SharedColor(Expr):
    """``the red circle and square``: one colour word shared by two nouns."""

    color: str
    shape_a: str
    shape_b: str

    def text(self) -> str:
        return f"the {self.color} {self.shape_a} and {self.shape_b}"

    def _parts(self) -> And:
        return And(Definite(Desc(self.color, self.shape_a)), Definite(Desc(self.color, self.shape_b)))

    def satisfied_by(self, subset, scene):
        return self._parts().satisfied_by(subset, scene)

    def descriptors(self):
        return self._parts().descriptors()


@dataclass(frozen=True)
class SharedSide(Expr):
    """``the circle and square on the left``: one location shared by two nouns."""

    side: str
    desc_a: Desc
    desc_b: Desc

    def text(self) -> str:
        return f"the {self.desc_a.phrase()} and {self.desc_b.phrase()} {SIDE_PHRASE[self.side]}"

    def _parts(self) -> And:
        a = Desc(self.desc_a.color, self.desc_a.shape, self.side)
        b = Desc(self.desc_b.color, self.desc_b.shape, self.side)
        return And(Definite(a), Definite(b))

    def satisfied_by(self, subset, scene):
        return self._parts().satisfied_by(subset, scene)

    def descriptors(self):
        return self._parts().descriptors()


@dataclass(frozen=True)
class Except(Expr):
    """``everything except E``."""

    excluded: Expr

    def text(self) -> str:
        return f"everything except {self.excluded.text()}"

    def satisfied_by(self, subset, scene):
        rest = scene.ids - subset
        return bool(subset) and bool(rest) and self.excluded.satisfied_by(rest, scene)

    def descriptors(self):
        return self.excluded.descriptors()


@dataclass(frozen=True)
class Relational(Expr):
    """``the Ds left of R``: every object fitting D that stands in the relation to R."""

    desc: Desc
    relation: str
    ref: Definite

    def text(self) -> str:
        return f"the {self.desc.phrase(plural=True)} {RELATIONS[self.relation]} {self.ref.text()}"

    def satisfied_by(self, subset, scene):
        if not subset:
            return False
        refs = [o for o in scene.objects if self.ref.satisfied_by(frozenset([o.id]), scene)]
        if len(refs) != 1:
            return False
        ref = refs[0]
        for o in scene.objects:
            fits = o.id != ref.id and self.desc.matches(o, scene) and related(o, self.relation, ref)
            if fits != (o.id in subset):
                return False
        return True

    def descriptors(self):
        return [self.desc] + self.ref.descriptors()


def satisfying_sets(expr: Expr, scene: Scene) -> list[frozenset[int]]:
    """All object subsets (including the empty one) that satisfy ``expr``."""
    ids = sorted(scene.ids)
    found = []
    for r in range(len(ids) + 1):
        for combo in itertools.combinations(ids, r):
            s = frozenset(combo)
            if expr.satisfied_by(s, scene):
                found.append(s)
    return found


def matches_nothing(expr: Expr, scene: Scene) -> bool:
    """True when no non-empty subset of objects fits any description in ``expr``."""
    ids = sorted(scene.ids)
    for r in range(1, len(ids) + 1):
        for combo in itertools.combinations(ids, r):
            if all(any(d.matches(scene.by_id(i), scene) for d in expr.descriptors()) for i in combo):
                return False
    return True


def is_relevant(expr: Expr, scene: Scene) -> bool:
    """At least one colour or shape named in the expression occurs in the scene."""
    colors = {o.color for o in scene.objects}
    shapes = {o.shape for o in scene.objects}
    return any(d.color in colors or d.shape in shapes for d in expr.descriptors())


@dataclass(frozen=True)
class ExpressionSpec:
    text: str
    target_ids: frozenset[int]
    kind: str
    expr: Expr = field(compare=False, repr=False)

    @property
    def no_target(self) -> bool:
        return not self.target_ids


# ---------------------------------------------------------------- template realization


def _unique(expr: Expr, scene: Scene) -> frozenset[int] | None:
    sets = satisfying_sets(expr, scene)
    return sets[0] if len(sets) == 1 and sets[0] else None


def _pick(rng: np.random.Generator, items: Sequence):
    return items[int(rng.integers(len(items)))]


def _unique_definites(scene: Scene) -> list[tuple[ObjectSpec, Definite]]:
    out = []
    for o in scene.objects:
        d = Definite(Desc(o.color, o.shape))
        if _unique(d, scene) == frozenset([o.id]):
            out.append((o, d))
    return out


def _realize_single(scene, rng, corpus):
    order = list(scene.objects)
    rng.shuffle(order)
    for o in order:
        tiers: list[list[Expr]] = [
            [Definite(Desc(o.color, o.shape))],
            [Definite(Desc(o.color, o.shape, s)) for s in SIDES],
            [Extreme(Desc(o.color, o.shape), d) for d in ("left", "right")],
        ]
        for tier in tiers:
            ok = [e for e in tier if _unique(e, scene) == frozenset([o.id])]
            if ok:
                return _pick(rng, ok)
    return None


def _realize_counting(scene, rng, corpus):
    candidates: list[Expr] = []
    for make in (lambda o: Desc(o.color, o.shape), lambda o: Desc(None, o.shape), lambda o: Desc(o.color, None)):
        descs = sorted({make(o) for o in scene.objects}, key=lambda d: (d.color or "", d.shape or ""))
        for d in descs:
            k = len(d.matching(scene))
            if k >= 2 and k in NUMBER_WORDS:
                candidates.append(Counted(d, k))
        if candidates:
            return _pick(rng, candidates)
    return None


def _realize_compound_and(scene, rng, corpus):
    defs = _unique_definites(scene)
    if len(defs) < 2:
        return None
    i, j = sorted(rng.choice(len(defs), size=2, replace=False).tolist())
    if rng.integers(2):
        i, j = j, i
    return And(defs[i][1], defs[j][1])


def _realize_compound_except(scene, rng, corpus):
    if len(scene.objects) < 3:
        return None
    defs = _unique_definites(scene)
    if not defs:
        return None
    return Except(_pick(rng, defs)[1])


def _realize_shared_attr(scene, rng, corpus):
    candidates: list[Expr] = []
    defs = _unique_definites(scene)
    for (a, _), (b, _) in itertools.combinations(defs, 2):
        if a.color == b.color and a.shape != b.shape:
            candidates.append(SharedColor(a.color, a.shape, b.shape))
    for side in SIDES:
        members = [o for o in scene.objects if on_side(o, side, scene)]
        for a, b in itertools.combinations(members, 2):
            da, db = Desc(None, a.shape), Desc(None, b.shape)
            if a.shape == b.shape:
                da, db = Desc(a.color, a.shape), Desc(b.color, b.shape)
            candidates.append(SharedSide(side, da, db))
    candidates = [e for e in candidates if _unique(e, scene) is not None]
    return _pick(rng, candidates) if candidates else None


def _realize_relational(scene, rng, corpus):
    candidates: list[Expr] = []
    for ref_obj, ref in _unique_definites(scene):
        for rel in RELATIONS:
            for desc in (Desc(), *sorted({Desc(None, o.shape) for o in scene.objects}, key=lambda d: d.shape)):
                fits = [
                    o for o in scene.objects if o.id != ref_obj.id and desc.matches(o, scene) and related(o, rel, ref_obj)
                ]
                if len(fits) >= 2:
                    candidates.append(Relational(desc, rel, ref))
    candidates = [e for e in candidates if _unique(e, scene) is not None]
    return _pick(rng, candidates) if candidates else None


def _realize_absent(scene, rng, corpus):
    colors = sorted({o.color for o in scene.objects})
    shapes = sorted({o.shape for o in scene.objects})
    present = {(o.color, o.shape) for o in scene.objects}
    both = [Desc(c, s) for c in colors for s in shapes if (c, s) not in present]
    one = [
        Desc(c, s)
        for c in COLORS
        for s in SHAPES
        if (c in colors) != (s in shapes) and (c, s) not in present
    ]
    pool = both or one
    if not pool:
        return None
    return Definite(_pick(rng, pool))


def _realize_deceptive(scene, rng, corpus):
    if not corpus:
        return None
    order = rng.permutation(len(corpus))
    for i in order:
        expr = corpus[int(i)]
        if matches_nothing(expr, scene) and is_relevant(expr, scene):
            return expr
    return None


_REALIZERS: dict[str, Callable] = {
    "single": _realize_single,
    "counting": _realize_counting,
    "compound_and": _realize_compound_and,
    "compound_except": _realize_compound_except,
    "shared_attr": _realize_shared_attr,
    "relational": _realize_relational,
    "no_target_absent": _realize_absent,
    "no_target_deceptive": _realize_deceptive,
}


def realize_expression(
    scene: Scene, kind: str, seed: int, corpus: Sequence[Expr] = ()
) -> ExpressionSpec:
    """Instantiate a template of ``kind`` for ``scene`` and verify it exhaustively.

    Raises ``SkipSignal`` when the scene cannot support the kind.
    """
    if kind not in _REALIZERS:
        raise InputError(f"unknown expression kind {kind!r}")
    rng = np.random.default_rng(seed)
    expr = _REALIZERS[kind](scene, rng, corpus)
    if expr is None:
        raise SkipSignal(f"scene {scene.seed} cannot support a {kind} expression")
    if kind in NO_TARGET_KINDS:
        if satisfying_sets(expr, scene) or not matches_nothing(expr, scene):
            raise SkipSignal(f"{expr.text()!r} refers to something in scene {scene.seed}")
        if not is_relevant(expr, scene):
            raise SkipSignal(f"{expr.text()!r} is unrelated to scene {scene.seed}")
        return ExpressionSpec(expr.text(), frozenset(), kind, expr)
    targets = _unique(expr, scene)
    if targets is None:
        raise SkipSignal(f"{expr.text()!r} is ambiguous in scene {scene.seed}")
    if kind in MULTI_KINDS and len(targets) < 2:
        raise SkipSignal(f"{expr.text()!r} has a single target")
    return ExpressionSpec(expr.text(), targets, kind, expr)


# ---------------------------------------------------------------- dataset files


@dataclass(frozen=True)
class DatasetConfig:
    train: int = 400
    val: int = 100
    mix_single: float = 0.4
    mix_multi: float = 0.3
    mix_notarget: float = 0.3
    scene: SceneConfig = SceneConfig()
    donor_scenes: int = 64

    def __post_init__(self):
        mix = (self.mix_single, self.mix_multi, self.mix_notarget)
        if any(m < 0 for m in mix) or abs(sum(mix) - 1.0) > 1e-9:
            raise InputError(f"kind mixture must be non-negative and sum to 1, got {mix}")


@dataclass(frozen=True)
class ManifestRow:
    image_path: str
    mask_path: str
    no_target: bool
    expression: str

    def line(self) -> str:
        return f"{self.image_path}\t{self.mask_path}\t{int(self.no_target)}\t{self.expression}"

    @classmethod
    def parse(cls, line: str) -> "ManifestRow":
        parts = line.rstrip("\n").split("\t", 3)
        if len(parts) != 4 or parts[2] not in ("0", "1"):
            raise InputError(f"malformed manifest line: {line!r}")
        return cls(parts[0], parts[1], parts[2] == "1", parts[3])


def _quota(total: int, weights: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``total`` by ``weights``."""
    raw = [total * w for w in weights]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def kind_schedule(n: int, config: DatasetConfig, rng: np.random.Generator) -> list[str]:
    groups = _quota(n, (config.mix_single, config.mix_multi, config.mix_notarget))
    kinds: list[str] = []
    for count, members in zip(groups, (SINGLE_KINDS, MULTI_KINDS, NO_TARGET_KINDS)):
        kinds += [members[i % len(members)] for i in range(count)]
    rng.shuffle(kinds)
    return kinds


def _sub_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


_SPLIT_CODE = {"train": 0, "val": 1}


def donor_corpus(seed: int, split: str, config: DatasetConfig) -> list[Expr]:
    """Expressions from other scenes of the same split, used for deceptive no-target samples."""
    code = _SPLIT_CODE[split]
    out: list[Expr] = []
    for i in range(config.donor_scenes):
        try:
            scene = generate_scene(_sub_seed(seed, code, i, 0, 7), config.scene)
            kind = "single" if i % 2 == 0 else "counting"
            out.append(realize_expression(scene, kind, _sub_seed(seed, code, i, 1, 7)).expr)
        except (SkipSignal, GenerationError):
            continue
    return out


@dataclass
class GeneratedSample:
    scene: Scene
    spec: ExpressionSpec
    image: np.ndarray
    mask: np.ndarray


def generate_split(
    seed: int, split: str, n: int, config: DatasetConfig, exclude_seeds: set[int] = frozenset()
) -> list[GeneratedSample]:
    code = _SPLIT_CODE[split]
    kinds = kind_schedule(n, config, np.random.default_rng(_sub_seed(seed, code, 99)))
    corpus = donor_corpus(seed, split, config)
    samples = []
    for index, kind in enumerate(kinds):
        for attempt in range(MAX_PLACEMENT_ATTEMPTS):
            scene_seed = _sub_seed(seed, code, index, attempt)
            if scene_seed in exclude_seeds:
                continue
            try:
                scene = generate_scene(scene_seed, config.scene)
                spec = realize_expression(scene, kind, _sub_seed(seed, code, index, attempt, 1), corpus)
            except (SkipSignal, GenerationError):
                continue
            samples.append(GeneratedSample(scene, spec, render(scene), rasterize_mask(scene, spec.target_ids)))
            break
        else:
            raise GenerationError(f"no {kind} sample found for {split} index {index}")
    return samples


def write_ppm(path: Path, image: np.ndarray) -> None:
    h, w, _ = image.shape
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def write_pgm(path: Path, mask: np.ndarray) -> None:
    h, w = mask.shape
    body = np.where(mask, 255, 0).astype(np.uint8).tobytes()
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + body)


def _read_netpbm(path: Path, magic: bytes) -> tuple[int, int, bytes]:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != magic or tokens[3] != b"255":
        raise InputError(f"{path}: expected a {magic.decode()} file with maxval 255")
    return int(tokens[1]), int(tokens[2]), raw[pos + 1 :]


def read_ppm(path: str | Path) -> np.ndarray:
    w, h, body = _read_netpbm(Path(path), b"P6")
    return np.frombuffer(body[: h * w * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def read_pgm(path: str | Path) -> np.ndarray:
    w, h, body = _read_netpbm(Path(path), b"P5")
    return np.frombuffer(body[: h * w], dtype=np.uint8).reshape(h, w) > 127


def build_dataset(out_dir: str | Path, config: DatasetConfig = DatasetConfig(), seed: int = 0) -> dict[str, Path]:
    """Write images, masks and ``train.tsv``/``val.tsv`` manifests under ``out_dir``."""
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create dataset directory {out}: {exc}") from exc
    manifests: dict[str, Path] = {}
    used: set[int] = set()
    for split, n in (("train", config.train), ("val", config.val)):
        samples = generate_split(seed, split, n, config, exclude_seeds=used)
        used |= {s.scene.seed for s in samples}
        rows = []
        for i, s in enumerate(samples):
            img_rel = f"images/{split}_{i:05d}.ppm"
            mask_rel = f"masks/{split}_{i:05d}.pgm"
            try:
                write_ppm(out / img_rel, s.image)
                write_pgm(out / mask_rel, s.mask)
            except OSError as exc:
                raise InputError(f"cannot write sample files under {out}: {exc}") from exc
            rows.append(ManifestRow(img_rel, mask_rel, s.spec.no_target, s.spec.text).line())
        path = out / f"{split}.tsv"
        path.write_text("\n".join(rows) + ("\n" if rows else ""), encoding="utf-8")
        manifests[split] = path
    return manifests


def read_manifest(path: str | Path) -> list[ManifestRow]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"manifest not found: {p}")
    return [ManifestRow.parse(ln) for ln in p.read_text(encoding="utf-8").splitlines() if ln.strip()]
