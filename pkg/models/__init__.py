"""Context network, hyperprior codec and entropy models."""
