"""Adaptive iterative linearized P1 finite elements for quasilinear elliptic problems."""
from .adapt import AdaptConfig, AdaptRunRecord, LevelRecord, run_adaptive
from .mesh import Mesh, bisect, make_lshape_initial, uniform_refine
from .problems import ProblemSpec, constant_mu, make_experiment
from .schemes import DampingControl, SchemeConfig, SchemeState, step
from .space import FeFunction, FeSpace

__version__ = "0.1.0"
