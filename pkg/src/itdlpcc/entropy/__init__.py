"""Range coder and the discrete probability models it consumes."""

from .coder import (
    EntropyCodingError,
    SymbolModel,
    build_factorized,
    build_symbol_model,
    decode_gaussian,
    decode_parametric,
    encode_gaussian,
    encode_parametric,
    model_from_pmf,
    parametric_cost_bits,
    range_decode,
    range_encode,
    table_cost_bits,
)
from .likelihood import LIKELIHOOD_FLOOR, gaussian_likelihood, logistic_likelihood

__all__ = [
    "EntropyCodingError",
    "LIKELIHOOD_FLOOR",
    "SymbolModel",
    "build_factorized",
    "build_symbol_model",
    "decode_gaussian",
    "decode_parametric",
    "encode_gaussian",
    "encode_parametric",
    "gaussian_likelihood",
    "logistic_likelihood",
    "model_from_pmf",
    "parametric_cost_bits",
    "range_decode",
    "range_encode",
    "table_cost_bits",
]
