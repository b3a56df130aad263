"""Scene dissection: pull physics specs out of a local scene into containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..model import NO_ENTITY, WORLD_OWNER, PhysComponentContainer, SpringSpec
from .gro import GraphicsObject
from .scene import LocalScene


@dataclass
class Dissection:
    scene: LocalScene                      # physics specs removed
    containers: list[PhysComponentContainer]
    ids: dict[str, int]                    # closure entity name -> EntityId


def physics_closure(scene: LocalScene) -> set[str]:
    """Names of physics-bearing entities plus all of their ancestors."""
    by_name = scene.by_name()
    keep: set[str] = set()
    for e in scene.entities:
        if not e.has_physics:
            continue
        name: Optional[str] = e.name
        while name is not None and name not in keep:
            keep.add(name)
            name = by_name[name].parent
    return keep


def dissect_scene(scene: LocalScene, first_id: int = 1, owner: int = WORLD_OWNER) -> Dissection:
    """Assign ids in pre-order over the closure and build one container per closure entity.

    Ancestors without specs of their own travel as transform-only containers so
    the server can rebuild the hierarchy.
    """
    scene.validate()
    by_name = scene.by_name()
    closure = physics_closure(scene)
    ids: dict[str, int] = {}
    for name in scene.traverse():
        if name in closure:
            ids[name] = first_id + len(ids)

    containers = []
    for name, eid in ids.items():
        e = by_name[name]
        springs = None
        if e.springs is not None:
            for s in e.springs:
                if s.other not in ids or not by_name[s.other].has_physics:
                    raise ValueError(f"spring on {name!r} targets {s.other!r}, which has no physics")
            springs = tuple(SpringSpec(ids[s.other], s.rest_length, s.stiffness, s.damping) for s in e.springs)
        containers.append(PhysComponentContainer(
            entity_id=eid,
            parent_id=ids[e.parent] if e.parent is not None else NO_ENTITY,
            owner=owner,
            transform=e.local,
            transform_only=not e.has_physics,
            body=e.body,
            collider=e.collider,
            interactable=e.interactable and e.has_physics,
            springs=springs,
        ))
    stripped = LocalScene([e.stripped() for e in scene.entities])
    return Dissection(stripped, containers, ids)


@dataclass
class GHostController:
    """Client-side controller: owns the dissection result and the GrO registry."""

    scene: LocalScene
    dissection: Optional[Dissection] = None
    registry: dict = field(default_factory=dict)

    def dissect(self) -> list[PhysComponentContainer]:
        self.dissection = dissect_scene(self.scene)
        self.scene = self.dissection.scene
        for pcc in self.dissection.containers:
            gro = GraphicsObject(pcc.entity_id, pcc.owner, pcc.interactable)
            self.registry[pcc.entity_id] = gro
        return self.dissection.containers

    @property
    def containers(self) -> list[PhysComponentContainer]:
        return self.dissection.containers if self.dissection else []

    def entity_id(self, name: str) -> int:
        return self.dissection.ids[name]
