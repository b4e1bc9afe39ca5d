"""hifbench: high-impedance-fault detection workbench.

Synthesizes labeled HIF / normal-transient current windows, trains a
from-scratch 1D CNN and an MLP baseline on them, and demonstrates transfer
learning from a data-rich feeder to a data-poor one.
"""

__version__ = "0.1.0"
