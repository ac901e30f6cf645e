"""Two-stage flow-matching video generator at desk scale.

A semantic generator plans a compact token grid for a clip; a latent
generator turns that plan into autoencoder latents; both are rectified-flow
transformers trained on synthetic sprite videos. Everything runs on CPU in
float64 NumPy with an optional compiled kernel core.
"""

__version__ = "0.1.0"
