import random

import numpy as np
import pytest

import oracles
from splitphys.client import GHostController, LocalScene, SceneEntity, SceneSpring, dissect_scene, physics_closure
from splitphys.client.scene import dump_scene, load_scene
from splitphys.model import NO_ENTITY, BodySpec, Box, ColliderSpec, Sphere
from splitphys.protocol import codec
from splitphys.server import Session, ServerConfig
from splitphys.transform import Transform


def random_scene(seed: int, size: int = 30) -> LocalScene:
    rng = random.Random(seed)
    ents = []
    for i in range(size):
        parent = rng.choice([None] + [e.name for e in ents]) if ents and rng.random() < 0.7 else None
        q = np.array([rng.gauss(0, 1) for _ in range(4)])
        q /= np.linalg.norm(q)
        local = Transform(tuple(rng.uniform(-2, 2) for _ in range(3)), tuple(q))
        kind = rng.random()
        body = collider = None
        if kind < 0.25:
            collider = ColliderSpec(Sphere(rng.uniform(0.05, 0.3)), trigger=rng.random() < 0.2)
            body = BodySpec(rng.uniform(0.1, 3.0))
        elif kind < 0.4:
            collider = ColliderSpec(Box(tuple(rng.uniform(0.05, 0.5) for _ in range(3))))
        ents.append(SceneEntity(f"e{i}", parent, local, body, collider, interactable=rng.random() < 0.5))
    return LocalScene(ents)


def _server_after_init(pccs):
    s = Session(ServerConfig(gravity=(0, 0, 0)))
    p = s.on_join()
    wire = codec.decode_message(codec.encode_message(codec.PCCBatch(tuple(pccs))))
    s.handle(p, wire)
    assert s.initialized
    return s, set(s.players[p].entities)


def _world_matrix(scene: LocalScene, name: str) -> np.ndarray:
    by = scene.by_name()
    m = np.eye(4)
    while name is not None:
        e = by[name]
        m = oracles.homogeneous(e.local.position, e.local.rotation) @ m
        name = e.parent
    return m


@pytest.mark.parametrize("seed", range(50))
def test_server_graph_isomorphic_to_client_closure(seed):
    scene = random_scene(seed)
    d = dissect_scene(scene)
    closure = oracles.closure_recursive(scene.entities)
    assert physics_closure(scene) == closure == set(d.ids)
    # ids follow pre-order of the full scene restricted to the closure
    order = [n for n in oracles.preorder_recursive(scene.entities) if n in closure]
    assert [d.ids[n] for n in order] == list(range(1, len(order) + 1))

    server, avatar = _server_after_init(d.containers)
    by = scene.by_name()

    def nearest_kept(name):
        p = by[name].parent
        return NO_ENTITY if p is None else d.ids[p]

    expected = {(d.ids[n], nearest_kept(n)) for n in closure}
    got = {(e, p) for e, p in server.scene.edges() if e not in avatar}
    assert got == expected
    assert not any(e.has_physics for e in d.scene.entities)
    assert [e.name for e in d.scene.entities] == [e.name for e in scene.entities]
    # world poses rebuilt on the server match a matrix chain on the client side;
    # containers carry f32 transforms, so the chain accumulates f32 rounding
    for n in closure:
        if not by[n].has_physics:
            continue
        m = _world_matrix(scene, n)
        t = server.world.transform(d.ids[n])
        assert np.allclose(t.position, m[:3, 3], atol=1e-5)
        assert oracles.matrix_angle(oracles.quat_matrix(t.rotation), m[:3, :3]) < 1e-5


def test_ancestors_travel_transform_only():
    scene = LocalScene([
        SceneEntity("root", None, Transform((1, 0, 0))),
        SceneEntity("mid", "root", Transform((0, 1, 0))),
        SceneEntity("leaf", "mid", Transform((0, 0, 1)), collider=ColliderSpec(Sphere(0.1))),
        SceneEntity("decor", "root"),
    ])
    d = dissect_scene(scene)
    assert d.ids == {"root": 1, "mid": 2, "leaf": 3}
    flags = {c.entity_id: c.transform_only for c in d.containers}
    assert flags == {1: True, 2: True, 3: False}
    assert [c.parent_id for c in d.containers] == [NO_ENTITY, 1, 2]


def test_springs_must_target_physics_entities():
    scene = LocalScene([
        SceneEntity("a", None, body=BodySpec(1.0), springs=(SceneSpring("b", 1.0, 10.0),)),
        SceneEntity("b", None, body=BodySpec(1.0)),
    ])
    d = dissect_scene(scene)
    assert d.containers[0].springs[0].other == d.ids["b"]
    bad = LocalScene([SceneEntity("a", None, body=BodySpec(1.0), springs=(SceneSpring("c", 1, 1),)),
                      SceneEntity("c", None)])
    with pytest.raises(ValueError):
        dissect_scene(bad)


def test_controller_registers_gros_and_strips_scene():
    scene = random_scene(3)
    ctl = GHostController(scene)
    pccs = ctl.dissect()
    assert set(ctl.registry) == {p.entity_id for p in pccs}
    assert not any(e.has_physics for e in ctl.scene.entities)


def test_scene_file_round_trip(tmp_path):
    scene = random_scene(11, 12)
    path = tmp_path / "scene.json"
    dump_scene(scene, str(path))
    back = load_scene(str(path))
    assert [e.name for e in back.entities] == [e.name for e in scene.entities]
    assert dissect_scene(back).ids == dissect_scene(scene).ids


def test_scene_validation():
    with pytest.raises(ValueError):
        LocalScene([SceneEntity("a", "b"), SceneEntity("b")]).validate()
    with pytest.raises(ValueError):
        LocalScene([SceneEntity("a"), SceneEntity("a")]).validate()
