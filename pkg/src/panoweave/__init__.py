"""panoweave: shifting-window panoramic video denoising engine."""

from .latent import PanoLatent, TileRegion, read_pwlt, write_pwlt
from .pipeline import GmgConfig, RunConfig, RunResult, run
from .schedule import NoiseSchedule, SeededRng, make_linear_schedule, renoise

__version__ = "0.1.0"

__all__ = [
    "PanoLatent", "TileRegion", "read_pwlt", "write_pwlt",
    "GmgConfig", "RunConfig", "RunResult", "run",
    "NoiseSchedule", "SeededRng", "make_linear_schedule", "renoise",
    "__version__",
]
