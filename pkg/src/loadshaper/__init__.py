"""Battery-backed load shaping for smart-meter privacy.

A DQN policy drives a household battery to hide real appliance signatures
and invent artificial ones; a sequence-to-point NILM attacker measures how
much privacy that buys, and a metrics layer turns both into comparable
numbers.
"""

__version__ = "0.1.0"
