"""Cube-regularized MNIST classifier with an exact quadratic-form algebra."""

from .cube_algebra import (
    BinaryQuadraticForm,
    Cube,
    check_eq1_relation,
    compose_forms,
    discriminant,
    principal_form,
    reduce,
    reduced_forms,
    slice_forms,
)
from .quad_reg import (
    CubeHead,
    ProbeQuadraticForm,
    QuadLossMode,
    cube_discriminant,
    jordan_compose,
    probe_discriminant,
    probe_eval,
    quad_loss,
    quad_loss_backward,
    total_loss,
)
from .train_eval import Model, TrainConfig, evaluate, extract_embeddings, train

__all__ = [
    "BinaryQuadraticForm",
    "Cube",
    "check_eq1_relation",
    "compose_forms",
    "discriminant",
    "principal_form",
    "reduce",
    "reduced_forms",
    "slice_forms",
    "CubeHead",
    "ProbeQuadraticForm",
    "QuadLossMode",
    "cube_discriminant",
    "jordan_compose",
    "probe_discriminant",
    "probe_eval",
    "quad_loss",
    "quad_loss_backward",
    "total_loss",
    "Model",
    "TrainConfig",
    "evaluate",
    "extract_embeddings",
    "train",
]

__version__ = "0.1.0"
