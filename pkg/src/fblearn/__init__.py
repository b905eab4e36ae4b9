"""Learned feedback-linearization tracking control and its analysis toolkit."""

from .analysis import (PEReport, StabilityFit, assemble_W, continuous_reward,
                       fit_exponential_bound, interp_matrix_series, least_squares_gradient,
                       ltv_matrix, pe_check, simulate_ideal, transition_matrix,
                       transition_norm_grid)
from .basis import (BasisSet, build_rbf_grid, controller_jacobian, eval_correction,
                    eval_learned_controller, feature_gram, polynomial_basis, rbf_basis)
from .config import ExperimentConfig, config_from_dict, load_config
from .errors import (ConfigError, DimensionError, DivergenceError, FblearnError,
                     SingularMatrixError)
from .learning import (AdaptRunRecord, BaselineSpec, GradientSample, PolicyConfig,
                       derive_seed, discrete_reward, estimate_gradient, grad_log_policy,
                       run_episode, sample_policy, step_rng, update_params)
from .linearize import (GainMatrix, ReferenceModel, build_reference_model, design_gain,
                        exact_tracking_control, tracking_error)
from .plants import (DoublePendulumParams, InSpanPlantSpec, PlantModel, eval_dynamics,
                     eval_io, integrate_zoh, linearizing_terms, make_chain_plant,
                     make_double_pendulum, make_inspan_plant, simulate_closed_loop)
from .reference import (ReferenceSample, SinusoidSum, sample_reference, two_tone_reference,
                        uniform_bound)
from .scenarios import Scenario, build_scenario, policy_config
from .studies import (BiasReport, ConcentrationReport, DisturbanceSamples, GradientStudy,
                      bias_study, concentration_study, mc_gradient_samples,
                      measure_disturbances, regressor_series)

__all__ = [name for name in dir() if not name.startswith("_")]
