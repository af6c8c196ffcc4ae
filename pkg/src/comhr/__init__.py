"""Contrastive multi-modal hypergraph reasoning for multi-person 3D pose."""

from .model import CoMHR, ModelConfig
from .scenegen import Scene, generate_scene, load_scene, perturb, save_scene

__all__ = ["CoMHR", "ModelConfig", "Scene", "generate_scene", "load_scene", "perturb", "save_scene"]
__version__ = "0.1.0"
