"""Factor discovery in spatiotemporal surface signals.

Subpackages cover the differentiable core, surface meshes and spectral
clustering, the sequential variational autoencoder, an InfoMax ICA null
model, a synthetic benchmark generator, and the evaluation protocol.
"""

__version__ = "0.1.0"
