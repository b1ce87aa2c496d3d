"""Two-stage text-in-image generation at desk scale.

Stage 1 predicts keyword bounding boxes from a prompt; stage 2 runs a latent
diffusion model conditioned on the character-level segmentation mask rendered
from those boxes. Dataset synthesis, filtering, and OCR-based evaluation
round out the pipeline.
"""

__version__ = "0.1.0"
