"""Trajectory, jump-process and worldline simulations for pilot-wave dynamics.

Submodules group the functionality: ``grid``/``propagators``/``spline``/
``timeline``/``stats``/``rng`` form the numerical core, ``bohm`` the
single-sector guidance law, ``fock`` and ``ibc`` the variable particle
number models, ``dirac``/``relativistic``/``multitime`` the 1+1 dimensional
relativistic part, and ``scenarios``/``cli`` the calibrated experiments.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: E402,F401,F403
from .grid import GridSpec, GridWavefunction, PhysicalConstants  # noqa: E402
from .rng import RngStream  # noqa: E402
from .stats import EnsembleReport, compare_histograms  # noqa: E402
from .bohm import BohmScenario, Configuration, JumpEvent, TrajectoryRecord, run_equivariance_experiment  # noqa: E402
from .fock import CutoffProfile, FockModel, FockState  # noqa: E402
from .ibc import IbcModel, RadialIbcState  # noqa: E402
from .dirac import DiracField, Foliation, Worldline  # noqa: E402
from .multitime import MultiTimeWF  # noqa: E402
