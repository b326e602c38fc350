"""Diffusion sampling on matrix Lie groups with Monte Carlo trivialized scores."""

from .errors import (ConfigError, EstimationError, EvaluationError, GridError, GroupError, GroupMismatchError,
                     HorizonError, MembershipError, NumericRangeError, TiedError)
from .lie import (CATALOG, GroupDescriptor, GroupElement, adjoint_matrix, bracket, exp_map, identity, inverse,
                  make_group, modular_log, multiply, trivialized_gradient)
from .noise import NoiseSample, NoiseSchedule, gamma_at, grid_index, sample_noise
from .sampler import EnergyHandle, SampleBatch, SamplerConfig, langevin_sample, score_estimate, tied_sample
from .inversion import (ActionDescriptor, DataEnergy, PointCloud, act, canonicalize, data_distance,
                        equivariant_predict, log_abs_det_jacobian, posterior_energy, posterior_handle)

__version__ = "0.1.0"
