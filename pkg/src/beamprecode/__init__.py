"""Beam-domain channel modeling and robust multi-user MIMO precoding.

The package covers the full chain: sampled-steering-vector beam bases for
uniform planar arrays (``steering``), synthetic multipath channels with
aging and posterior models (``channel``), KL fixed-point estimation of
beam-domain power matrices and MMSE coefficient estimation (``stats``),
robust precoder optimization on the sum-power sphere with RZF / SLNR /
WMMSE baselines (``precoder``), and an end-to-end simulation harness with
a CLI (``harness``, ``cli``).
"""

from .steering import (ArrayGeometry, SamplingGrid, SteeringMatrices,
                       build_grids, build_steering_matrices, ula_steering,
                       upa_steering)
from .channel import (AgingProfile, BeamDomainChannel, ChannelPowerMatrix,
                      PathPosterior, PathSet, PosteriorChannel, aggregate_beta,
                      assemble_H, beta_from_speed, evolve_gauss_markov,
                      jakes_alpha, path_channel, paths_to_omega,
                      posterior_model, sample_beam_channel, sample_posterior,
                      synth_paths)
from .stats import (FixedPointResult, PhiMatrix, PilotConfig, TransformSet,
                    build_transforms, compute_phi, fixed_point_fit,
                    kl_divergence, kl_gradient, kl_objective,
                    mmse_beam_estimate, second_moment_transform,
                    simulate_pilot_slot, unitary_pilots)
from .precoder import (PrecoderSet, SolverReport, UserLink, algorithm1_step,
                       algorithm2_step, eta, eta_tilde, expected_rate_mc,
                       expected_wsr_mc, grad_matrices_closed, grad_matrices_mc,
                       interference_cov, perfect_csi_wsr, rate_upper_bound,
                       riemannian_grad, rzf_precoder, slnr_precoder, solve,
                       weighted_sum_upper_bound, wmmse_precoder)
from .harness import (CellResult, RunReport, ScenarioConfig, emit,
                      load_channel_dump, load_power_matrices, parse_csv,
                      run_scenario, save_channel_dump, save_power_matrices,
                      stream, sweep)

__version__ = "0.1.0"
