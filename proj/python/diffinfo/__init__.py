"""Information flow in diffusion generative processes.

Thin Python surface over the C++ core: the joint-Gaussian oracle, the VP
diffusion process, analytic/learned/CFG score fields, samplers,
entropy-matching training, and the entropy / mutual-information estimators.
"""

from ._core import *  # noqa: F401,F403
from ._core import __doc__ as _core_doc

__all__ = [name for name in dir() if not name.startswith("_")]
__doc__ = _core_doc
