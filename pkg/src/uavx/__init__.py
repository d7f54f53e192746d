"""UAV obstacle-avoidance training framework.

A simulated 3-D world observed through a ray-cast depth camera, a dueling
double Q-network agent, and three exploration strategies (epsilon-greedy,
convergence, guidance) that can be trained and compared from the command
line. Everything is seeded and reproducible.
"""

__version__ = "0.1.0"
