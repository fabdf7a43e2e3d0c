from .arithmetic import (
    AcDecoder,
    AcEncoder,
    ArithmeticCodingError,
    ac_decode,
    ac_encode,
    ac_exact_decode,
    ac_exact_interval,
)
from .huffman import HuffmanCodebook, HuffmanError, huffman_build, huffman_decode, huffman_encode
from .rans import (
    RANS_L,
    RansError,
    RansStream,
    rans_decode,
    rans_encode,
    rans_pop_exact,
    rans_push_exact,
    reservoir_words,
    splitmix64,
)
