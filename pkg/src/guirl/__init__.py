"""Batch reinforcement learning for GUI testing on accessibility trees.

Modules: ``uitree`` (trees, identifiers, hashing), ``featurize`` (one-hot
graph features), ``env`` (simulator), ``apps`` (built-in apps), ``data``
(episode stores and training sets), ``nn`` (graph attention Q-network),
``qlearn`` (batch DQN), ``policy`` (action selection), ``evaluation``
(metrics, oracles, experiments), ``config`` and ``cli``.
"""

__version__ = "0.1.0"
