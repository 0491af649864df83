"""latentdialog: latent-variable neural dialog models on a numpy substrate.

Train, sample from, and evaluate encoder-decoder dialog models with a
conditional-VAE latent (optionally supervised by dialog-act labels and
a bag-of-words auxiliary loss), entirely in numpy, deterministically.
"""

__version__ = "0.1.0"

from . import corpus, evaluation, generation, model, numeric, synth, training

__all__ = [
    "corpus",
    "evaluation",
    "generation",
    "model",
    "numeric",
    "synth",
    "training",
    "__version__",
]
