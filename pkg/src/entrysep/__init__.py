"""Entry separation for OCR'd, column-structured documents.

Injects categorical visual tokens (breaks, quantized indents) into a
subword text stream and classifies tokens with a small encoder-only
transformer to place entry begin/end marks, optionally jointly with named
entity labels.
"""

__version__ = "0.1.0"
