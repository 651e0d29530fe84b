from .deepfool import NO_FLIP_SCORE, deepfool
from .diversity import covering_radius, k_center_greedy, kmeans_pp_seeding
from .glister import glister_greedy, head_gradients, validation_loss
from .scores import (
    HIGHER,
    LOWER,
    ScoreTable,
    SelectionResult,
    entropy,
    score_bald,
    score_entropy,
    score_least_confidence,
    score_margin,
    select_by_score,
    write_score_csv,
)
from .strategies import (
    STRATEGIES,
    SelectionRequest,
    score_deepfool,
    select,
    select_badge,
    select_bald,
    select_coreset,
    select_deepfool,
    select_entropy,
    select_glister,
    select_least_confidence,
    select_margin,
    select_random,
)
