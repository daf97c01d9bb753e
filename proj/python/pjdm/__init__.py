"""Python bindings for the PJDM sinogram tracer-conversion core.

Arrays are 2-D float64 numpy arrays (rows = projection angles, columns =
detector bins for sinograms). The experiment commands take the same flat
config dictionary as the ``pjdm`` CLI.
"""

import json as _json

from ._pjdm import (  # noqa: F401
    BridgeSchedule,
    NumericalError,
    bridge_coeffs,
    degrade,
    fbp,
    forward_bridge_sample,
    forward_noise,
    gen_dataset,
    nrmse,
    phantom,
    profile_line,
    psnr,
    radon,
    read_sinogram,
    refine_schedule,
    ssim,
    time_grid,
    write_sinogram,
    _default_config,
    _run,
)

COMMANDS = ("gen-data", "train-bridge", "train-refiner", "convert", "evaluate", "ablate")


def default_config():
    """The full default configuration as a dict."""
    return _json.loads(_default_config())


def run(command, config=None, **overrides):
    """Run one experiment command.

    ``config`` is a dict of config keys (missing keys take their defaults);
    keyword arguments override individual keys.
    """
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}; expected one of {COMMANDS}")
    cfg = dict(config or {})
    cfg.update(overrides)
    return _json.loads(_run(command, _json.dumps(cfg)))
