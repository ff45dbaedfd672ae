"""Bidirectional information-distance rewards for retrieval-augmented reasoning.

Modules: ``lm`` (bit-cost providers), ``infodist``, ``trajectory``,
``retrieval`` (BM25), ``rewards``, ``synthenv`` (synthetic multi-hop world),
``policy`` and ``trainer`` (GRPO), ``merge``, ``evalreport``, ``config``,
``service`` and ``cli``.
"""

__version__ = "0.1.0"
