from .attention import AttentionParams, graph_attention, multi_head_attention
from .optim import Adam, adam_step
from .tape import Tape, Var

__all__ = ["Adam", "AttentionParams", "Tape", "Var", "adam_step", "graph_attention", "multi_head_attention"]
