"""CSP-style concurrency: channels, selectors and transputers over lightweight processes."""

from . import select
from .channels import (
    GROWING,
    ONE_SHOT,
    RENDEZVOUS,
    Channel,
    ChannelKind,
    Input,
    Output,
    make_channel,
)
from .combinators import (
    MergedOutput,
    dup_input,
    filter_input,
    fold_async,
    fold_input,
    map_async,
    map_input,
    merge_outputs,
    zip_inputs,
)
from .errors import (
    ChannelClosedError,
    DeadlockError,
    DefinitionError,
    EndOfInputError,
    GopherError,
    RejectedError,
    UsageError,
)
from .flow import CLOSED, NEVER, ContRead, ContWrite, Done, Failure, FlowTermination, Skip, Value
from .runtime import (
    Executor,
    ExecutorConfig,
    Future,
    ProcessHandle,
    current_executor,
    defer,
    go,
    recover,
    sleep,
    spawn,
)
from .select import Selector, on_read, on_timeout, on_write
from .transputer import (
    ESCALATE,
    RESTART,
    STOP,
    Distribute,
    Duplicate,
    InPort,
    OutPort,
    RecoveryDecision,
    ReplicatedTransputer,
    Share,
    Transputer,
    compose,
    define_transputer,
    replicate,
)

__version__ = "0.1.0"
