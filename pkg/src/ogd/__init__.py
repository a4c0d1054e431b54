"""Oracle-guided diffusion sampling for 3D point clouds.

An unconditional denoising process over position/feature point clouds is
steered by gradients estimated from a non-differentiable black-box oracle
(two-sided random-probe estimation), by analytic property guidance in noisy
or clean space, by bilevel combinations of the two, or by an evolutionary
baseline.  Closed-form denoisers for Gaussian / mixture targets make every
step checkable against exact quantities at desk scale.
"""

from .schedule import NoiseSchedule, build_schedule, forward_diffuse, posterior_mean, t0_estimate
from .geomstate import (
    AtomLabels,
    PointState,
    apply_rotation,
    project_zero_cog,
    random_rotation,
    sample_perturbation,
)
from .denoiser import (
    AffineDecoder,
    Decoder,
    Denoiser,
    GaussianDenoiser,
    IdentityDecoder,
    MixtureDenoiser,
    ZeroDenoiser,
    predict_noise,
)
from .toyoracle import (
    Bond,
    LennardJones,
    OracleEval,
    RelaxResult,
    ToyPotential,
    evaluate,
    evaluate_batch,
    harmonic_chain,
    objective,
    objective_batch,
    objective_gradient,
    radius_of_gyration,
    relax,
)
from .guidance import (
    GuidanceConfig,
    clean_guidance_delta,
    clean_recompose,
    guided_steps,
    is_guided_step,
    noisy_guidance_gradient,
    spsa_oracle_gradient,
)
from .sampler import (
    EvoConfig,
    RunConfig,
    run_chain_range,
    run_mode,
    sample_bilevel_clean,
    sample_bilevel_noisy,
    sample_clean_guided,
    sample_evolutionary,
    sample_noisy_guided,
    sample_oracle_guided,
    sample_unguided,
    select_best_variant,
)
from .metrics import (
    SampleRecord,
    SampleReport,
    SpsaDiagnostic,
    build_report,
    energy_above_ground_state,
    force_rms,
    property_mae,
    spsa_cosine_diagnostic,
    toy_validity,
)
from .xtb_bridge import XtbConfig, invoke, parse_gradient_file, parse_xyz, write_xyz

__version__ = "0.1.0"
