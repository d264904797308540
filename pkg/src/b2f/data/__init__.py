from .kinematics import matrix_from_rot6d, rot6d_from_matrix, to_character_frame
from .motion import (
    BODY_DIM,
    EXPR_DIM,
    FACE_DIM,
    JAW_DIM,
    KEY_JOINTS,
    BodyMotionSequence,
    Clip,
    FacialMotionSequence,
    MotionError,
    MotionSegment,
    TrainingBatch,
    clip_expressions,
    sample_batch,
    segment_clips,
    segment_starts,
)
from .synthetic import SyntheticFactorRecord, SyntheticWorld, generate_synthetic_corpus

__all__ = [
    "BODY_DIM",
    "EXPR_DIM",
    "FACE_DIM",
    "JAW_DIM",
    "KEY_JOINTS",
    "BodyMotionSequence",
    "Clip",
    "FacialMotionSequence",
    "MotionError",
    "MotionSegment",
    "SyntheticFactorRecord",
    "SyntheticWorld",
    "TrainingBatch",
    "clip_expressions",
    "generate_synthetic_corpus",
    "matrix_from_rot6d",
    "rot6d_from_matrix",
    "sample_batch",
    "segment_clips",
    "segment_starts",
    "to_character_frame",
]
