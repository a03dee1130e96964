"""Relation extraction over whole documents, reasoning at entity, sentence and document level.

Modules:

- ``autodiff``: tape-based reverse-mode differentiation over numpy arrays
- ``layers``: embeddings, BiLSTM, attention pooling, FFNN, biaffine
- ``model``: the network and its ablation switches
- ``corpus``: DocRED ingestion, vocabulary, pair enumeration
- ``synth``: synthetic corpora with a known labelling rule
- ``train`` / ``metrics``: Adam training, threshold selection, F1 and Ign F1
- ``checkpoint``, ``plotting``, ``cli``: artifacts and the command line
"""

__version__ = "0.1.0"
