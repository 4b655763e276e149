"""
Multi-head self-attention over the set of per-view latents.

The view tokens attend to each other (Q = K = V = features, no positional
encoding), the heads are concatenated and mapped by W^O, and the result is added
back onto the tokens. The fused latent is the mean over the output tokens, so the
whole module is invariant to the order of the views. W^O starts at zero, which
makes a freshly initialised fuser an exact pass-through.
"""
import math
from typing import List

from refine3d.autodiff import ops
from refine3d.autodiff.tensor import Tensor
from refine3d.errors import DimensionError, EmptySetError
from refine3d.model.config import ModelConfig
from refine3d.model.layers import ParamSpec
from refine3d.model.registry import ParameterRegistry, Partition

PROJECTIONS = ("w_q", "w_k", "w_v")


def attention_specs(cfg: ModelConfig) -> List[ParamSpec]:
    if not cfg.latent_dim:
        return []
    L, dk = cfg.latent_dim, cfg.head_dim
    specs = [
        ParamSpec(f"attention.head{i}.{proj}", (L, dk), Partition.PHI_ATT, "xavier", L)
        for i in range(cfg.heads)
        for proj in PROJECTIONS
    ]
    specs.append(ParamSpec("attention.w_o", (L, L), Partition.PHI_ATT, "zeros"))
    return specs


def _projection(params: ParameterRegistry, cfg: ModelConfig, proj: str) -> Tensor:
    """Per-head [L, dk] matrices side by side as one [L, heads * dk] matrix"""
    return ops.concat([params[f"attention.head{i}.{proj}"] for i in range(cfg.heads)], axis=1)


def _split_heads(x: Tensor, cfg: ModelConfig) -> Tensor:
    B, N, _ = x.shape
    return ops.transpose(ops.reshape(x, (B, N, cfg.heads, cfg.head_dim)), (0, 2, 1, 3))


def attend_tokens(features: Tensor, cfg: ModelConfig, params: ParameterRegistry) -> Tensor:
    """Output tokens [B, N, L] for input tokens [B, N, L]"""
    B, N, L = features.shape
    q = _split_heads(ops.matmul(features, _projection(params, cfg, "w_q")), cfg)
    k = _split_heads(ops.matmul(features, _projection(params, cfg, "w_k")), cfg)
    v = _split_heads(ops.matmul(features, _projection(params, cfg, "w_v")), cfg)
    scores = ops.scalar_mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(cfg.head_dim))
    heads = ops.matmul(ops.softmax(scores, axis=-1), v)
    merged = ops.reshape(ops.transpose(heads, (0, 2, 1, 3)), (B, N, L))
    return ops.add(features, ops.matmul(merged, params["attention.w_o"]))


def attend(features: Tensor, cfg: ModelConfig, params: ParameterRegistry) -> Tensor:
    """
    Fuse view latents into one latent.

    features: [N, L] -> [L], or batched [B, N, L] -> [B, L].
    """
    single = features.ndim == 2
    x = ops.reshape(features, (1,) + features.shape) if single else features
    if x.ndim != 3 or x.shape[-1] != cfg.latent_dim:
        raise DimensionError(
            f"attend: expected [N, {cfg.latent_dim}] or [B, N, {cfg.latent_dim}] features, got {list(features.shape)}"
        )
    if x.shape[1] == 0:
        raise EmptySetError("attend: the view set is empty")
    fused = ops.mean(attend_tokens(x, cfg, params), axis=1)
    return ops.reshape(fused, (cfg.latent_dim,)) if single else fused
