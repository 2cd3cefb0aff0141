"""Neural networks on incomplete inputs via expected first-layer activations
under a Gaussian-mixture model of the missing data."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .density import (GmmParams, MissingPoint, ConditionalGmm, conditional,  # noqa: E402
                      conditional_limits, em_fit, log_component_coeff, sample_completion)
from .activations import (ReluUnit, RbfUnit, nr, nr_deriv, relu_expected,  # noqa: E402
                          rbf_expected, relu_expected_grad, rbf_expected_grad)
from .nn import (LayerSpec, NetworkModel, TrainConfig, backward, forward,  # noqa: E402
                 loss_cross_entropy, loss_masked_mse, train)
from .data import DatasetWithMask, MaskPolicy, apply_mask, kfold_split, load_csv, normalize  # noqa: E402

__all__ = [
    "__version__", "BACKEND", "GmmParams", "MissingPoint", "ConditionalGmm", "conditional",
    "conditional_limits", "em_fit", "log_component_coeff", "sample_completion", "ReluUnit",
    "RbfUnit", "nr", "nr_deriv", "relu_expected", "rbf_expected", "relu_expected_grad",
    "rbf_expected_grad", "LayerSpec", "NetworkModel", "TrainConfig", "backward", "forward",
    "loss_cross_entropy", "loss_masked_mse", "train", "DatasetWithMask", "MaskPolicy",
    "apply_mask", "kfold_split", "load_csv", "normalize",
]
