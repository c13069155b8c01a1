"""Likelihood-free inference on product manifolds of Euclidean spaces and spheres.

Neural ratio estimates drive a geodesic Hamiltonian Monte Carlo sampler and a
Riemannian gradient-ascent MAP search. The grasp pipeline in :mod:`geosbi.graspsim`
strings the pieces together for planar grasp poses.
"""

from .errors import GeosbiError
from .manifold import Euclidean, ManifoldSpec, Sphere, geodesic_distance, geodesic_step
from .mcmc import SamplerConfig, geodesic_hmc
from .nre import RatioEnsemble, RatioModel, TrainConfig, fit_ratio, train_ensemble

__version__ = "0.1.0"

__all__ = [
    "Euclidean",
    "GeosbiError",
    "ManifoldSpec",
    "RatioEnsemble",
    "RatioModel",
    "SamplerConfig",
    "Sphere",
    "TrainConfig",
    "fit_ratio",
    "geodesic_distance",
    "geodesic_hmc",
    "geodesic_step",
    "train_ensemble",
]
