"""Self-supervised through-plane super-resolution of anisotropic multi-slice volumes."""

__version__ = "0.1.0"

from .acquisition import (  # noqa: E402
    AcquisitionSpec,
    SliceProfile,
    degrade_1d,
    load_profile,
    make_profile,
    save_profile,
    simulate_acquisition,
)
from .grid import GridSpec1D, InterpKernel, derive_output_grid, resample_1d, resample_along_axis  # noqa: E402
from .volume import Volume  # noqa: E402
