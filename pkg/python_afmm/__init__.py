from .api import Reinitializer, RunOutcome
from .config import RunSettings, load_settings
from .march import run_afmm, run_standard_fmm
from .models import ErrorReport, GridSpec, RunStatistics, StencilResult
from .shapes import get_shape

__author__ = "JustMe_001"
__version__ = "0.1.0"
__email__ = ""
