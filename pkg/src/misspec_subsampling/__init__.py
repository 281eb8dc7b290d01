"""Subsampling large regression datasets when the GLM may be misspecified."""

from .errors import (ConvergenceError, DegenerateFitError, DimensionError,
                     OverflowRowError, SingularSystemError, StudyError,
                     SubsamplingError)
from .glm import (BERNOULLI, GAUSSIAN, POISSON, Dataset, Family, FitResult,
                  fit_extended, fit_mle, linear_predictor, mean_response,
                  working_weights)
from .loss import (LossBreakdown, SigmaPair, amse_loss, info_matrices,
                   l1_variance_criterion, sigma_estimates)
from .misspec import (BasisSpec, InteractionBasis, MisspecEstimate, amsme,
                      build_interaction_basis, extended_model_misspec,
                      first_order_misspec)
from .probs import (ProbabilityVector, RLState, aopt_probs, l1opt_probs,
                    logodds_scale, lopt_probs, make_rl_state, power_scale,
                    reduction_of_loss, rl_to_probs, rl_vector, rlmamse_probs,
                    uniform_probs)
from .sampler import (AliasTable, Algorithm2Result, SubsampleDraw, algorithm1,
                      algorithm2, draw_with_replacement, two_stage)

__version__ = "0.1.0"
