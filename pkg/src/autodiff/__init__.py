from .param_store import ParamStore, WEIGHT, ARCH, sgd_step, clip_grad_norm, parameter_count
from .tensor_ops import ComputeGraph, backward, primitive_forward
from .grad_check import GradCheckReport, finite_diff_check, finite_diff_report
