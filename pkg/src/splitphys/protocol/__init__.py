from .codec import (  # noqa: F401
    DEFAULT_MAX_PAYLOAD,
    MASK_BOTH,
    MASK_POSITION,
    MASK_ROTATION,
    DecodeError,
    GroupedUpdate,
    TransformRecord,
    decode_group,
    decode_message,
    decode_pcc_batch,
    encode_group,
    encode_message,
    encode_pcc_batch,
    record_size,
)
from .delta import DEFAULT_POS_EPS, DEFAULT_ROT_EPS, apply_record, diff_transform, make_record  # noqa: F401
from .reliable import Connection, ConnectionDead, decode_envelope, encode_envelope  # noqa: F401
