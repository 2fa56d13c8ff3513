from .dual import Dual, jvp
from .expr import ExprError, ExprSyntaxError, FieldExpr, UnknownIdentifierError, VariableIndexError, parse, parse_field
from .fields import (
    AccuracyWarning,
    AffineField,
    BracketField,
    CallableField,
    DiffConfig,
    ExprField,
    Field,
    ad_fields,
    bracket_field,
    iterated_ad,
    lie_bracket,
)
from .frames import (
    BUILTIN_FRAMES,
    FrameError,
    ManifoldFrame,
    builtin_frame,
    expression_frame,
    frame_from_dict,
    load_frame,
    matrix_group_frame,
    so3_generators,
)

__all__ = [
    "Dual",
    "jvp",
    "ExprError",
    "ExprSyntaxError",
    "FieldExpr",
    "UnknownIdentifierError",
    "VariableIndexError",
    "parse",
    "parse_field",
    "AccuracyWarning",
    "AffineField",
    "BracketField",
    "CallableField",
    "DiffConfig",
    "ExprField",
    "Field",
    "ad_fields",
    "bracket_field",
    "iterated_ad",
    "lie_bracket",
    "BUILTIN_FRAMES",
    "FrameError",
    "ManifoldFrame",
    "builtin_frame",
    "expression_frame",
    "frame_from_dict",
    "load_frame",
    "matrix_group_frame",
    "so3_generators",
]
