"""Protocol messages exchanged between the server and its clients.

Round indices on the wire are 0-based (t = 0 .. T-1).
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import List

import numpy as np


class MessageKind(IntEnum):
    REGISTER = 1
    INIT = 2
    GLOBAL_UPDATE = 3
    LOCAL_RESULT = 4
    GLOBAL_MODEL_EVAL = 5
    SHUTDOWN = 6


@dataclass(eq=False)
class Register:
    client_id: int
    config_hash: str
    kind = MessageKind.REGISTER


@dataclass(eq=False)
class Init:
    config_hash: str
    spec: str  # canonical JSON: mode, network spec, genotype (eval mode), rounds
    kind = MessageKind.INIT


@dataclass(eq=False)
class GlobalUpdate:
    round: int
    weights: List[np.ndarray]
    alpha: List[np.ndarray] | None = None  # [alpha_normal, alpha_reduce]; None in eval mode
    kind = MessageKind.GLOBAL_UPDATE


@dataclass(eq=False)
class LocalResult:
    round: int
    client_id: int
    num_samples: int
    weights: List[np.ndarray]
    alpha: List[np.ndarray] | None = None
    kind = MessageKind.LOCAL_RESULT


@dataclass(eq=False)
class GlobalModelEval:
    round: int
    loss: float
    acc: float
    kind = MessageKind.GLOBAL_MODEL_EVAL


@dataclass(eq=False)
class Shutdown:
    reason: str = "done"
    kind = MessageKind.SHUTDOWN


RoundMessage = Register | Init | GlobalUpdate | LocalResult | GlobalModelEval | Shutdown

MESSAGE_TYPES = {cls.kind: cls for cls in (Register, Init, GlobalUpdate, LocalResult, GlobalModelEval, Shutdown)}


def kind_name(msg: RoundMessage) -> str:
    return type(msg).__name__
