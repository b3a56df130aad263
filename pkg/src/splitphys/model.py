"""Domain types shared by the graphics host and the physics server.

Entity ids are 32-bit and nonzero (0 means "no parent"). Player ids are
16-bit with 0 reserved for world-owned entities.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .transform import Transform, UNIT_TOL, qnorm

NO_ENTITY = 0
WORLD_OWNER = 0
MAX_ENTITY_ID = 0xFFFFFFFF
MAX_PLAYER_ID = 0xFFFF


class NotFoundError(KeyError):
    pass


def check_entity_id(value: int) -> int:
    if not isinstance(value, int) or not 1 <= value <= MAX_ENTITY_ID:
        raise ValueError(f"invalid entity id {value!r}")
    return value


def check_player_id(value: int) -> int:
    if not isinstance(value, int) or not 0 <= value <= MAX_PLAYER_ID:
        raise ValueError(f"invalid player id {value!r}")
    return value


@dataclass(frozen=True)
class Sphere:
    radius: float


@dataclass(frozen=True)
class Box:
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "half_extents", tuple(float(h) for h in self.half_extents))


Shape = Union[Sphere, Box]


@dataclass(frozen=True)
class BodySpec:
    mass: float = 1.0
    kinematic: bool = False
    linear_damping: float = 0.0
    restitution: float = 0.0


@dataclass(frozen=True)
class ColliderSpec:
    shape: Shape
    trigger: bool = False


@dataclass(frozen=True)
class SpringSpec:
    other: int
    rest_length: float
    stiffness: float
    damping: float = 0.0


@dataclass(frozen=True)
class PhysComponentContainer:
    """Physics payload extracted from one entity on the graphics host."""

    entity_id: int
    parent_id: int = NO_ENTITY
    owner: int = WORLD_OWNER
    transform: Transform = field(default_factory=Transform)
    transform_only: bool = False
    body: Optional[BodySpec] = None
    collider: Optional[ColliderSpec] = None
    interactable: bool = False
    springs: Optional[tuple[SpringSpec, ...]] = None

    @property
    def has_physics(self) -> bool:
        return self.body is not None or self.collider is not None or self.springs is not None


PCC = PhysComponentContainer


def validate_pcc(pcc: PhysComponentContainer) -> list[str]:
    """Return every violated container invariant; an empty list means valid."""
    problems = []
    if not isinstance(pcc.entity_id, int) or not 1 <= pcc.entity_id <= MAX_ENTITY_ID:
        problems.append(f"entity_id {pcc.entity_id!r} out of range")
    if not 0 <= pcc.parent_id <= MAX_ENTITY_ID:
        problems.append(f"parent_id {pcc.parent_id!r} out of range")
    if pcc.parent_id == pcc.entity_id:
        problems.append("entity is its own parent")
    if not 0 <= pcc.owner <= MAX_PLAYER_ID:
        problems.append(f"owner {pcc.owner!r} out of range")
    if abs(qnorm(pcc.transform.rotation) - 1.0) > UNIT_TOL:
        problems.append("rotation is not unit-norm")
    if pcc.transform_only:
        if pcc.has_physics:
            problems.append("transform_only container carries physics specs")
    elif not pcc.has_physics:
        problems.append("container has no body, collider or springs")
    if pcc.body is not None:
        b = pcc.body
        if not b.kinematic and not b.mass > 0:
            problems.append("dynamic body needs mass > 0")
        if b.linear_damping < 0:
            problems.append("negative linear damping")
        if not 0.0 <= b.restitution <= 1.0:
            problems.append("restitution outside [0, 1]")
    if pcc.collider is not None:
        shape = pcc.collider.shape
        if isinstance(shape, Sphere):
            if not shape.radius > 0:
                problems.append("sphere radius must be > 0")
        elif isinstance(shape, Box):
            if not all(h > 0 for h in shape.half_extents):
                problems.append("box half-extents must be > 0")
        else:
            problems.append(f"unknown collider shape {shape!r}")
    for s in pcc.springs or ():
        if s.other == pcc.entity_id or not 1 <= s.other <= MAX_ENTITY_ID:
            problems.append(f"spring to invalid entity {s.other!r}")
        if s.rest_length < 0 or s.stiffness < 0 or s.damping < 0:
            problems.append("spring parameters must be non-negative")
    return problems


class CollisionKind(enum.IntEnum):
    ENTER = 0
    EXIT = 1


@dataclass(frozen=True, order=True)
class CollisionEvent:
    kind: CollisionKind
    a: int
    b: int
    tick: int

    def __post_init__(self):
        if self.a > self.b:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)
        object.__setattr__(self, "kind", CollisionKind(self.kind))


@dataclass
class SceneNode:
    parent: int = NO_ENTITY
    local: Transform = field(default_factory=Transform)
    children: list[int] = field(default_factory=list)


class SceneGraph:
    """Entity hierarchy with local transforms, keyed by EntityId."""

    def __init__(self):
        self.nodes: dict[int, SceneNode] = {}

    def __contains__(self, entity_id: int) -> bool:
        return entity_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def add(self, entity_id: int, parent: int = NO_ENTITY, local: Optional[Transform] = None):
        check_entity_id(entity_id)
        if entity_id in self.nodes:
            raise ValueError(f"duplicate entity id {entity_id}")
        if parent != NO_ENTITY and parent not in self.nodes:
            raise NotFoundError(parent)
        self.nodes[entity_id] = SceneNode(parent, local or Transform())
        if parent != NO_ENTITY:
            self.nodes[parent].children.append(entity_id)

    def remove(self, entity_id: int):
        """Remove a node; its children are re-rooted at the removed node's parent."""
        node = self._node(entity_id)
        if node.parent != NO_ENTITY:
            self.nodes[node.parent].children.remove(entity_id)
        for child in node.children:
            self.nodes[child].parent = node.parent
            if node.parent != NO_ENTITY:
                self.nodes[node.parent].children.append(child)
        del self.nodes[entity_id]

    def reparent(self, entity_id: int, new_parent: int):
        node = self._node(entity_id)
        if new_parent != NO_ENTITY:
            self._node(new_parent)
            p = new_parent
            while p != NO_ENTITY:
                if p == entity_id:
                    raise ValueError("reparent would create a cycle")
                p = self.nodes[p].parent
        if node.parent != NO_ENTITY:
            self.nodes[node.parent].children.remove(entity_id)
        node.parent = new_parent
        if new_parent != NO_ENTITY:
            self.nodes[new_parent].children.append(entity_id)

    def parent_of(self, entity_id: int) -> int:
        return self._node(entity_id).parent

    def roots(self) -> list[int]:
        return [i for i, n in self.nodes.items() if n.parent == NO_ENTITY]

    def traverse(self) -> Iterable[int]:
        """Depth-first pre-order: roots in insertion order, children in insertion order."""
        stack = list(reversed(self.roots()))
        while stack:
            i = stack.pop()
            yield i
            stack.extend(reversed(self.nodes[i].children))

    def edges(self) -> set[tuple[int, int]]:
        return {(i, n.parent) for i, n in self.nodes.items()}

    def _node(self, entity_id: int) -> SceneNode:
        try:
            return self.nodes[entity_id]
        except KeyError:
            raise NotFoundError(entity_id) from None


def compose_world_transform(graph: SceneGraph, entity_id: int) -> Transform:
    chain = []
    i = entity_id
    while i != NO_ENTITY:
        node = graph._node(i)
        chain.append(node.local)
        i = node.parent
    world = Transform()
    for local in reversed(chain):
        world = world.compose(local)
    return world
