"""Desk-scale transformer NMT with the decoding speed knobs under study."""

from .bpe import BpeModel, bpe_apply, bpe_decode, bpe_learn
from .model import ModelConfig, aan_context, forward, init_params, parameter_count
from .pipeline import DecodeOptions, Translator, decode_corpus
from .quant import QuantizedTensor, dequantize, dequantized_params, quantize_tensor
from .search import beam_search, decode_beam, decode_greedy, greedy_search
from .timing import DecodeTiming, measure_decode_time
from .toy import RuleTranslator, toy_corpus
from .train import TrainHyperparams, TrainingDiverged, train

__all__ = [
    "BpeModel", "bpe_apply", "bpe_decode", "bpe_learn",
    "ModelConfig", "aan_context", "forward", "init_params", "parameter_count",
    "DecodeOptions", "Translator", "decode_corpus",
    "QuantizedTensor", "dequantize", "dequantized_params", "quantize_tensor",
    "beam_search", "decode_beam", "decode_greedy", "greedy_search",
    "DecodeTiming", "measure_decode_time",
    "RuleTranslator", "toy_corpus",
    "TrainHyperparams", "TrainingDiverged", "train",
]
