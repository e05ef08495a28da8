"""Hybrid classical-quantum linear solves on a simulated device.

Submodules: ``statevec`` (simulator), ``qasm`` (circuit text format),
``hhl`` (circuit synthesis), ``pde`` (heat equation driver), ``protocol``
(device server and client), ``sched`` (cluster scheduling simulator).
"""
from .hhl import HhlSolver, hhl_solve, prepare_system
from .protocol import DeviceClient, RemoteExecutor, qsolve_Axb

__version__ = "0.1.0"

__all__ = ["HhlSolver", "hhl_solve", "prepare_system", "DeviceClient", "RemoteExecutor", "qsolve_Axb", "__version__"]
