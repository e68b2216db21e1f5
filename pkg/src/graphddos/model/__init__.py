from .config import DEFAULT_POOL_RATIOS, ModelConfig
from .conv import GraphView, HeteroAttentionConv
from .net import CanonGraph, FlowScores, HGUNet, canonicalize
from .pool import AttentionPool, PoolLevel, PoolRecord, Unpool, kept_count

__all__ = [
    "AttentionPool",
    "CanonGraph",
    "DEFAULT_POOL_RATIOS",
    "FlowScores",
    "GraphView",
    "HGUNet",
    "HeteroAttentionConv",
    "ModelConfig",
    "PoolLevel",
    "PoolRecord",
    "Unpool",
    "canonicalize",
    "kept_count",
]
