"""maskmesh: decentralized lifelong RL agents sharing per-task modulating masks.

Every agent trains per-task masks over one fixed random backbone network and
exchanges consolidated masks with peers through an on-demand four-message
query protocol (task query, query response, mask request, mask transfer).
"""

from maskmesh.backbone import Backbone, init_backbone
from maskmesh.masks import BinaryMask, LinearCoefficients, MaskScores, MaskStore, binarize, combine_masks

__version__ = "0.1.0"

__all__ = [
    "Backbone",
    "init_backbone",
    "MaskScores",
    "BinaryMask",
    "LinearCoefficients",
    "MaskStore",
    "binarize",
    "combine_masks",
]
