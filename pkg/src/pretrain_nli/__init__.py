"""Entailment experiments with pretrained, retrofitted and random word embeddings.

Modules: ``embeddings`` (GloVe-style text I/O and preprocessing),
``retrofit`` (lexicon-graph retrofitting), ``initializers`` (Gaussian and
block-orthogonal weights), ``hypersearch`` (annealed random search),
``negation`` (recursively negated word-pair data), ``seq2seq`` (numpy LSTM
encoder-decoder with local attention), ``trainer`` and ``experiments``.
"""

__version__ = "0.1.0"
