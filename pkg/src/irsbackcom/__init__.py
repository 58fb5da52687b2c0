"""Transmit power minimization for IRS-aided bistatic backscatter networks."""
