from .dissect import Dissection, GHostController, dissect_scene, physics_closure
from .ghost import ClientConfig, GHostClient, InteractState, Interactor
from .gro import GraphicsObject, NotReady
from .scene import LocalScene, SceneEntity, SceneSpring, dump_scene, load_scene, scene_from_dict

__all__ = [
    "GHostClient", "ClientConfig", "Interactor", "InteractState", "GraphicsObject", "NotReady",
    "GHostController", "Dissection", "dissect_scene", "physics_closure",
    "LocalScene", "SceneEntity", "SceneSpring", "load_scene", "dump_scene", "scene_from_dict",
]
