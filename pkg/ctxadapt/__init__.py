"""
Context-conditioned reinforcement learning: hypernetwork-generated adapters, baseline policies,
soft actor-critic training, contextual environments, evaluation and theory checks.
"""

__version__ = "0.1.0"
