"""i2vc: a unified intra/inter-frame video codec at desk scale.

One conditional variable-rate codec serves I, P and B frames; inter-frame
alignment is implicit (masked deterministic inversion of the reference feature
instead of motion estimation); bitstreams are real range-coded payloads behind
a small container format.
"""

from .diffusion import (
    DiffusionSchedule,
    SeededPredictor,
    ZeroPredictor,
    build_schedule,
    denoise_from,
    denoise_step,
    implicit_motion,
    invert,
    masked_invert_step,
)
from .entropy import (
    Bitpayload,
    SymbolDistribution,
    context_params,
    estimate_rate,
    kernel_name,
    range_decode,
    range_encode,
)
from .gop import (
    FeatureBuffer,
    FrameType,
    GopConfig,
    GopEntry,
    compress_frame,
    decompress_frame,
    fuse_references,
    occlusion_estimate,
    schedule,
)
from .harness import (
    RdPoint,
    TunableParams,
    compute_loss,
    perceptual_proxy,
    psnr,
    rd_sweep,
    synth_sequence,
    tune,
)
from .latent import LatentTransform
from .stvc import (
    StvcWeights,
    decode_feature,
    encode_feature,
    make_weights,
    quantize,
    stgu_forward,
)

__version__ = "0.1.0"
