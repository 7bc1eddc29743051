"""spikeforge: train, quantize, partition, and simulate fixed-point spiking CNNs."""

__version__ = "0.1.0"
