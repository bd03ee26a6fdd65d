"""Source-condition doubly robust inference for linear inverse problems."""
