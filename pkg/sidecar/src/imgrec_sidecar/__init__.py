"""Image feature extraction sidecar.

Runs a ResNet50 over item images and writes two IFV1 feature files: the
2048-dim globally pooled final activations and the 1024-dim pooled
activations from the end of the third residual stage. The recommender
engine consumes these files; nothing else is shared between the packages.
"""

__version__ = "0.1.0"
