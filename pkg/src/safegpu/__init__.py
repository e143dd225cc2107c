"""A checker, simulator and CUDA emitter for a small safe GPU language.

Submodules: ``nat`` (size arithmetic), ``syntax`` (AST and parser),
``exec_model`` (execution resources), ``places`` (views and aliasing),
``typechecker``, ``interpreter`` (simulation oracle), ``lowering`` and
``codegen`` (CUDA emission), ``cli``.
"""

from pathlib import Path

__version__ = "0.1.0"

CORPUS_DIR = Path(__file__).resolve().parent / "corpus"
