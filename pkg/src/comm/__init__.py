from .messages import Register, Init, GlobalUpdate, LocalResult, GlobalModelEval, Shutdown, MessageKind
from .wire import (
    encode,
    decode,
    FrameError,
    BadMagicError,
    VersionMismatchError,
    ChecksumError,
    TruncatedFrameError,
    UnknownKindError,
)
from .transport import channel_pair, TcpListener, connect_tcp, ConnectionClosed, ReceiveTimeout
from .server import server_loop, ServerOutcome
from .client import client_loop, ClientOutcome
from .trace import check_trace
