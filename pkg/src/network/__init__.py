"""向量场网络"""

from .field_net import (
    FieldEvalTape, FieldParams, FlowBatch, TimeEncoding, batch_input_vjp, count_flops,
    encode_time, forward, forward_batch, init_params, init_params_from_config, input_vjp,
    loss_and_param_grad, per_sample_loss_and_grad, score_flops, tensor_names,
)
from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    "FieldEvalTape", "FieldParams", "FlowBatch", "TimeEncoding", "batch_input_vjp", "count_flops",
    "encode_time", "forward", "forward_batch", "init_params", "init_params_from_config",
    "input_vjp", "loss_and_param_grad", "per_sample_loss_and_grad", "score_flops",
    "tensor_names",
    "decode_checkpoint", "encode_checkpoint", "load_checkpoint", "save_checkpoint",
]
