"""peermuse: peer recommendations that maximize predicted ideation scores.

Subpackages follow the processing pipeline: graph (bipartite network
features), semantics (distances and creativity quotient), metrics
(rarity-based scores), features (model inputs), model (boosted trees,
selection, Shapley attribution), recommender (pair search and
explanations), sim (agent-based experiment harness), cli (operator
surface).
"""

__version__ = "0.1.0"
