"""Scene description files for graphics hosts.

A scene is JSON::

    {"entities": [
        {"name": "table", "parent": null,
         "position": [0, 0.5, 0], "rotation": [0, 0, 0, 1],
         "body": {"mass": 5, "kinematic": false, "linear_damping": 0.1, "restitution": 0.2},
         "collider": {"box": [1, 0.05, 0.5], "trigger": false},
         "interactable": false,
         "springs": [{"other": "lamp", "rest_length": 1, "stiffness": 50, "damping": 1}]}
    ]}

``position``/``rotation`` are local to the parent. Every key other than
``name`` is optional. ``collider`` holds either ``sphere`` (radius) or
``box`` (half extents). Parents must be listed before their children.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

from ..model import BodySpec, Box, ColliderSpec, Sphere
from ..transform import Transform


@dataclass(frozen=True)
class SceneSpring:
    other: str
    rest_length: float
    stiffness: float
    damping: float = 0.0


@dataclass
class SceneEntity:
    name: str
    parent: Optional[str] = None
    local: Transform = field(default_factory=Transform)
    body: Optional[BodySpec] = None
    collider: Optional[ColliderSpec] = None
    interactable: bool = False
    springs: Optional[tuple[SceneSpring, ...]] = None

    @property
    def has_physics(self) -> bool:
        return self.body is not None or self.collider is not None or self.springs is not None

    def stripped(self) -> "SceneEntity":
        return replace(self, body=None, collider=None, springs=None)


@dataclass
class LocalScene:
    entities: list[SceneEntity] = field(default_factory=list)

    def by_name(self) -> dict[str, SceneEntity]:
        return {e.name: e for e in self.entities}

    def children(self) -> dict[Optional[str], list[str]]:
        out: dict[Optional[str], list[str]] = {}
        for e in self.entities:
            out.setdefault(e.parent, []).append(e.name)
        return out

    def traverse(self):
        """Depth-first pre-order names: roots then children, each in file order."""
        kids = self.children()
        stack = list(reversed(kids.get(None, [])))
        while stack:
            name = stack.pop()
            yield name
            stack.extend(reversed(kids.get(name, [])))

    def validate(self):
        seen: set[str] = set()
        for e in self.entities:
            if e.name in seen:
                raise ValueError(f"duplicate entity name {e.name!r}")
            if e.parent is not None and e.parent not in seen:
                raise ValueError(f"entity {e.name!r} lists unknown or later parent {e.parent!r}")
            seen.add(e.name)

    def to_dict(self) -> dict:
        return {"entities": [_entity_to_dict(e) for e in self.entities]}


def _entity_to_dict(e: SceneEntity) -> dict:
    d: dict = {"name": e.name, "parent": e.parent, "position": list(e.local.position),
               "rotation": list(e.local.rotation)}
    if e.body is not None:
        b = e.body
        d["body"] = {"mass": b.mass, "kinematic": b.kinematic, "linear_damping": b.linear_damping,
                     "restitution": b.restitution}
    if e.collider is not None:
        s = e.collider.shape
        d["collider"] = {"sphere": s.radius} if isinstance(s, Sphere) else {"box": list(s.half_extents)}
        d["collider"]["trigger"] = e.collider.trigger
    if e.interactable:
        d["interactable"] = True
    if e.springs is not None:
        d["springs"] = [{"other": s.other, "rest_length": s.rest_length, "stiffness": s.stiffness,
                         "damping": s.damping} for s in e.springs]
    return d


def _entity_from_dict(d: dict) -> SceneEntity:
    body = collider = springs = None
    if "body" in d:
        body = BodySpec(**d["body"])
    if "collider" in d:
        c = d["collider"]
        if "sphere" in c:
            shape = Sphere(float(c["sphere"]))
        elif "box" in c:
            shape = Box(tuple(c["box"]))
        else:
            raise ValueError(f"collider of {d['name']!r} needs 'sphere' or 'box'")
        collider = ColliderSpec(shape, bool(c.get("trigger", False)))
    if "springs" in d:
        springs = tuple(SceneSpring(**s) for s in d["springs"])
    return SceneEntity(
        name=d["name"],
        parent=d.get("parent"),
        local=Transform(tuple(d.get("position", (0, 0, 0))), tuple(d.get("rotation", (0, 0, 0, 1)))).normalized(),
        body=body,
        collider=collider,
        interactable=bool(d.get("interactable", False)),
        springs=springs,
    )


def scene_from_dict(data: dict) -> LocalScene:
    scene = LocalScene([_entity_from_dict(d) for d in data.get("entities", [])])
    scene.validate()
    return scene


def load_scene(path: str) -> LocalScene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def dump_scene(scene: LocalScene, path: str):
    with open(path, "w") as fh:
        json.dump(scene.to_dict(), fh, indent=2)
