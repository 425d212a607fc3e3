"""latent-atlas: visual maps of audio embedding spaces.

Projects an embedding dataset to 2D, maps canvas coordinates back to
embedding space, turns embeddings into keyword-weighted prompts, and paints
a seamless map image through an iterative patch-inpainting loop with
pluggable renderer backends.
"""

__version__ = "0.1.0"
