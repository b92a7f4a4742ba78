"""Demonstration-augmented goal-conditioned RL on a kinematic tabletop.

A single recorded manipulation demonstration is retargeted to new start/goal
layouts with a per-axis affine map, replayed under a noisy proportional
controller to fill a demonstration replay buffer, and mixed into off-policy
DDPG+HER training.  A WebSocket teleoperation server lets a human record the
seed demonstration in the same simulator the agent trains in.
"""

__version__ = "0.1.0"
