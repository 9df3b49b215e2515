"""Image I/O, synthetic corpora and checkpoint persistence."""

from .checkpoint import (
    Checkpoint,
    CheckpointError,
    ConsistencyError,
    MagicError,
    TruncatedError,
    VersionError,
    load_checkpoint,
    save_checkpoint,
)
from .corpus import Corpus, CorpusSpec, flat_fraction, flat_mask, gen_corpus, load_corpus
from .images import ImageFormatError, decode_pnm, encode_pbm, encode_pgm, read_image, write_image
