"""Idle-CPU profiling, proportional co-location planning and simulation for
bulk-synchronous MPI jobs on Kubernetes."""

__version__ = "0.1.0"
