from .base import (
    BackendError,
    BackendResponse,
    ChatBackend,
    ChatRequest,
    EmptyResponseError,
    Message,
    PermanentBackendError,
    RetryPolicy,
    Role,
    Speaker,
    TransientBackendError,
    complete_batch,
    raise_batch_failures,
)
from .cassette import CassetteMissError, CassettePlayer, CassetteRecorder
from .scripted import (
    EchoAugmentor,
    SyntheticAssessor,
    SyntheticAugmentor,
    SyntheticStudent,
    SyntheticTeacher,
    SyntheticWorld,
    TableBackend,
    synthetic_student_update,
    topic_of,
)
from .wire import WireBackend, WireConfig

__all__ = [
    "BackendError",
    "BackendResponse",
    "CassetteMissError",
    "CassettePlayer",
    "CassetteRecorder",
    "ChatBackend",
    "ChatRequest",
    "EchoAugmentor",
    "EmptyResponseError",
    "Message",
    "PermanentBackendError",
    "RetryPolicy",
    "Role",
    "Speaker",
    "SyntheticAssessor",
    "SyntheticAugmentor",
    "SyntheticStudent",
    "SyntheticTeacher",
    "SyntheticWorld",
    "TableBackend",
    "TransientBackendError",
    "WireBackend",
    "WireConfig",
    "complete_batch",
    "raise_batch_failures",
    "synthetic_student_update",
    "topic_of",
]
