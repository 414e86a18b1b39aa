"""Shared setup for the experiment scripts: the synthetic degradation and the calibration kernel."""

from eodeblur.degrade import DegradeSpec, apply
from eodeblur.scenes import render_scene
from eodeblur.spectral import estimate_otf, kernel_from_otf

CALIBRATION_SEED = 10_000


def degrade_spec(seed: int, radius: float = 4.0, photons: float = 2000.0) -> DegradeSpec:
    return DegradeSpec(({"kind": "defocus", "radius": radius}, {"kind": "shot", "photons": photons}), seed)


def calibration_kernel(size: int = 256, support: int = 15, **spec_kw):
    """Kernel recovered from a single held-aside degraded/sharp pair."""
    ref = render_scene(size, CALIBRATION_SEED)
    deg = apply(degrade_spec(CALIBRATION_SEED, **spec_kw), ref)
    return kernel_from_otf(estimate_otf(deg, ref), support)
