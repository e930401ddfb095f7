"""Contrastive-learning color constancy at desk scale.

Synthetic spectral scenes, raw-domain color augmentation, a small numpy
network trained with an angular + InfoNCE objective, and the usual
angular-error evaluation tools.
"""

__version__ = "0.1.0"
