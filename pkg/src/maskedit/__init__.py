"""maskedit: instruction-guided image editing via dual-branch diffusion
inpainting, at a desk-testable scale.

Pipeline: an instruction is decomposed into an edit plan (type, target
object, mask, post-edit caption) by pluggable language/detection clients;
the plan is executed by a frozen toy diffusion model whose features are
steered through a trainable attention-free branch reading the masked
image, then composited back with exact background preservation.
"""

from .accel import USING_NUMBA
from .branch import (
    BranchNetwork,
    InjectionConfig,
    assemble_branch_input,
    inject,
    inpaint_sample,
)
from .conductor import (
    Conductor,
    EditRound,
    EditSession,
    IdentityCodec,
    ModelBundle,
    Overrides,
    SessionStore,
    apply_overrides,
    build_toy_bundle,
    load_bundle,
)
from .denoiser import ConvDenoiser, StackSpec
from .diffusion import (
    SamplerConfig,
    ddim_step,
    forward_noise,
    make_latent_blend_hook,
    sample,
    training_loss,
)
from .embedding import CaptionEmbedder
from .instructor import (
    EditInstruction,
    EditPlan,
    InstructorClients,
    build_plan,
    classify_edit,
    compose_caption,
    locate_target,
    make_stub_clients,
)
from .masks import (
    BlurSpec,
    blur_mask,
    downsample_mask,
    filter_mask,
    latent_blend,
    paste_blend,
    random_brush_mask,
)
from .metrics import MetricReport, TokenOverlapBackend, compute_fidelity, text_alignment
from .schedule import NoiseSchedule, make_schedule
from .scenes import ProceduralScene, ShapeSpec, analyze_image, synth_dataset
from .training import (
    Probe,
    TrainConfig,
    TrainingPair,
    TrainResult,
    build_probe,
    heldout_comparison,
    make_training_pair,
    pretrain_base,
    probe_loss,
    train_branch,
)

__version__ = "0.1.0"
