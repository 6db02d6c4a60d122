from .base import (
    TASK_IDS,
    AdapterError,
    ChatAdapter,
    ChatReply,
    ChatTask,
    MissingPlaceholder,
    SchemaError,
    TaskRegistry,
    TransportError,
    TruncationError,
    UnknownTask,
    canonical_json,
    chat_call,
    default_registry,
    parse_json_lenient,
    payload_key,
)
from .cassette import Cassette, CassetteCorrupt, CassetteMiss, atomic_write, record_replay
from .embed import EmbeddingAdapter, HashEmbedder, TableEmbedder, unit_rows
from .live import HTTPChatAdapter, HTTPEmbedder
from .mock import MockChatAdapter, MockMiss, MockWorld, load_fixtures, mock_adapter


def embed(embedder: EmbeddingAdapter, texts):
    """Unit-norm embeddings, one row per text."""
    return embedder.embed(texts)
