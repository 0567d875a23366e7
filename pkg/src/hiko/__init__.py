"""Hierarchical KO codes over the Reed-Muller Plotkin tree.

Modules:
    codes        RM(m, r) parameters, Plotkin tree, message layout, encoder
    channel      BPSK, power normalization, AWGN, SNR conventions
    classical    Dumer recursive soft decoding
    nn           numpy MLP, Adam, one-cycle schedule
    ko           neural KO/HiKO encoder and hybrid decoder
    training     constituent training, mapping, progressive unfreezing
    checkpoint   checkpoint container and file formats
    evaluation   BER/BLER Monte Carlo and distance analysis
    cli          command-line entry point
"""

from hiko.classical import L_MAX, dumer_decode, lse
from hiko.codes import CodeParams, build_plotkin_tree, code_params, message_layout, rm_encode
from hiko.ko import NeuralCodec, ko_decode_hybrid, ko_encode, llr_propagate

__version__ = "0.1.0"

__all__ = [
    "L_MAX",
    "CodeParams",
    "NeuralCodec",
    "build_plotkin_tree",
    "code_params",
    "dumer_decode",
    "ko_decode_hybrid",
    "ko_encode",
    "llr_propagate",
    "lse",
    "message_layout",
    "rm_encode",
]
