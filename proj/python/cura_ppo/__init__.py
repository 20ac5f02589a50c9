"""Risk- and uncertainty-aware pushing: simulator, distributional collision
estimator and PPO building blocks (C++ core)."""

from ._cura import *  # noqa: F401,F403
from ._cura import __version__  # noqa: F401
