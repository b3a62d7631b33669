"""Scale functions, spectra and quasi-stationary laws for processes without negative jumps."""

__version__ = "0.1.0"

from .core import (
    Boundary,
    BoundaryCase,
    Closure,
    ComplexRate,
    MeasureKind,
    Model,
    ReferenceMeasure,
    ScaleKernel,
    StateGrid,
    StructuralError,
    Truncation,
    validate,
    validate_model,
    window_sum,
)
from .models import (
    ChainSpec,
    ClosedFormBM,
    DiffusionSpec,
    birth_death_chain,
    build_bm_closed_form,
    build_chain,
    build_diffusion,
    chain_scale_direct,
    two_state_chain,
)
from .qsd import QsdBundle, qsd_density, yaglom_projection
from .scale import wq_eval
from .spectral import SpectralProblem, classify_boundary, decay_parameter, spectral_gap, spectrum_in_rect
