"""Shifted-window transformer for binary image-quality classification.

Everything runs on a small numpy autodiff engine; no deep-learning
framework is required. Submodules:

- ``tensor``: reverse-mode autodiff primitives
- ``swin``: architecture, parameter/FLOP accounting
- ``augment``: training-time image augmentation
- ``data``: synthetic quality-assessment datasets and image IO
- ``train``: optimizer, schedules, training loop, metrics, checkpoints
- ``cli``: command-line entry points
"""

__version__ = "0.1.0"
