"""Dipole inversion for susceptibility mapping with a learned k-space kernel.

The analytic dipole kernel is zero on a double cone in k-space, so a single
field map cannot determine susceptibility there. This package pairs a compact
convolutional reconstructor with a sinusoidal network that predicts the kernel
for any field orientation, trained with a cone-weighted kernel loss. Classical
baselines (TKD, COSMOS), synthetic phantoms and image metrics are included.
"""

from .classical import OrientationSet, TkdConfig, cosmos_invert, tkd_invert
from .dipole import Orientation, Z_AXIS, DipoleKernel, ConeMask, cone_mask, dipole_kernel, forward_field
from .errors import (
    ConfigError,
    DegenerateOrientations,
    EmptyDataset,
    GridMismatch,
    InsufficientOrientations,
    MissingCheckpoint,
    MissingForwardCache,
    NonHermitianSpectrum,
    QSMError,
    ShapeOutOfBounds,
    VolumeFormatError,
    ZeroReference,
)
from .grid import FreqCoords, GridSpec, Spectrum3D, Volume3D, fft_forward, fft_inverse, freq_coords
from .losses import (
    HyperParams,
    WeightMask,
    loss_dc,
    loss_dipole,
    loss_fill,
    loss_inr,
    loss_qsmnet,
    loss_total,
    weight_mask,
)
from .metrics import MetricsReport, evaluate, hfen, nrmse, psnr, ssim
from .phantom import (
    Box,
    Cylinder,
    NoiseSpec,
    PhantomSpec,
    Sphere,
    build_phantom,
    default_phantom_spec,
    orientation_sweep,
    synth_orientation_set,
)
from .recon import ConvReconstructor, recon_backward, recon_forward
from .siren import CoordBatch, SirenNet, siren_backward, siren_forward, synthesize_kernel
from .training import TrainConfig, TrainState, alternate_train, predicted_kernel, reconstruct

__version__ = "0.1.0"
