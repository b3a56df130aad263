from .softbody import SoftBody, build_softbody, kinetic_energy, radius_for_count, skin_vertices, sphere_shell, spring_forces
from .world import DYNAMIC, KINEMATIC, STATIC, Collider, RigidBody, SimulationFault, World, WorldConfig

__all__ = [
    "World", "WorldConfig", "RigidBody", "Collider", "SimulationFault", "STATIC", "DYNAMIC", "KINEMATIC",
    "SoftBody", "build_softbody", "skin_vertices", "spring_forces", "kinetic_energy", "radius_for_count", "sphere_shell",
]
