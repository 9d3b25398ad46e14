"""
Flow-equation renormalization of the fractional cubic elliptic equation
driven by white noise, on the d-dimensional torus.
"""
__version__ = "0.1.0"

from .grid import TorusGrid, Field, sample_white_noise
from .kernels import KernelFactory, PeriodizedKernel
from .scaling import Dimensions, classify
from .tensorkern import KernelTensor
from .flow import FlowConfig, integrate_flow, closed_form_coefficients
from .renorm import counterterms_mode, counterterms_mc
from .solver import picard_solve, series_solution, besov_norm, convergence_study
