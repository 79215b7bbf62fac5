"""Parameter-efficient tuning of a frozen speech encoder for speaker verification."""
from .backbone import Backbone, BackboneConfig
from .errors import (ConfigError, ContractError, DimensionError, FormatError, InputError,
                     NumericError, PetForgeError)
from .harness import RunConfig, evaluate, export_layer_weights, pretrain, report_params, train
from .head import HeadConfig
from .metrics import DcfParams, compute_eer, compute_min_dcf, cosine_score
from .model import SpeakerModel, count_trainable
from .pet import METHODS, MethodSpec

__version__ = "0.1.0"
