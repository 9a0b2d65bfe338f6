"""Active-acoustic 3D human pose estimation at desk scale.

Simulated swept-sine sensing of a moving 21-joint body, B-format log-mel +
intensity features, and a position-adversarial windowed convolutional pose
regressor with phase-shift data augmentation.
"""

__version__ = "0.1.0"
