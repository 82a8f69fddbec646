"""Image reconstruction from indirect data with a deformation path toward a reference.

The reconstruction ``I_0`` is the start of a time-discrete path of frames
``I_0, ..., I_K = R`` linked by small deformations; the objective adds the
path energy to an L2-TV model of the measurements.
"""
from ._backend import BACKEND
from .convex import PDParams, solve_l2tv, solve_weighted_step
from .energy import EnergyParams, full_objective, path_energy
from .grid import DisplacementField, warp
from .metrics import psnr, ssim
from .multilevel import RunConfig, RunResult, run_tdm_inv
from .operators import DownsampleOp, IdentityOp, RadonOp, add_gaussian_noise
from .palm import PalmParams, run_palm
from .phantoms import gen_phantom, make_phantom
from .registration import RegParams, register

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DisplacementField",
    "DownsampleOp",
    "EnergyParams",
    "IdentityOp",
    "PDParams",
    "PalmParams",
    "RadonOp",
    "RegParams",
    "RunConfig",
    "RunResult",
    "add_gaussian_noise",
    "full_objective",
    "gen_phantom",
    "make_phantom",
    "path_energy",
    "psnr",
    "register",
    "run_palm",
    "run_tdm_inv",
    "solve_l2tv",
    "solve_weighted_step",
    "ssim",
    "warp",
]
