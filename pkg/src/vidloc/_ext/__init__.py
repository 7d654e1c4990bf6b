"""Compiled kernels. Built from ``_kernels.pyx`` by ``setup.py``; optional."""
