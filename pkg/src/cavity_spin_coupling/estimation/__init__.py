"""Least-squares estimation of coupling parameters from spectra, tracks and sample series."""
