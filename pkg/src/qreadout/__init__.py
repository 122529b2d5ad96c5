"""Readout of amplitude-encoded grid functions: real-space and Fourier-space
sampling, amplitude-estimation variants, benchmarks and flow-field tools."""

__version__ = "0.1.0"

from .gridfn import GridSpec, GridFunction, NormalizedState, encode, l2ns_error  # noqa: E402
from .readout_sampling import (ReadoutConfig, Reconstruction, rsr_readout, arsr_readout,  # noqa: E402
                               fsr_readout, extension_fsr_readout)
from .readout_qae import RqaeConfig, rqae_estimate, fsqae_readout, fsqae2_readout, rsqae_readout  # noqa: E402

__all__ = [
    "GridSpec", "GridFunction", "NormalizedState", "encode", "l2ns_error",
    "ReadoutConfig", "Reconstruction", "rsr_readout", "arsr_readout", "fsr_readout", "extension_fsr_readout",
    "RqaeConfig", "rqae_estimate", "fsqae_readout", "fsqae2_readout", "rsqae_readout",
]
