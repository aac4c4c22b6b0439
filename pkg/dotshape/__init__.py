"""Shape reconstruction from time-resolved transport data."""

from .config import PipelineConfig, load_preset, parse_config
from .errors import (
    CflError,
    ConfigError,
    DotShapeError,
    GeometryError,
    MismatchError,
    NumericalError,
)
from .grid import GridSpec, MediumFields, PhantomSpec, Side, TimeGrid, build_phantom
from .reconstruction import Reconstructor, run_pipeline
from .transport import SourceSpec, forward_solve, hg_kernel, measure
