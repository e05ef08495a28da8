"""Device-side circuit execution shared by the in-process executor and the server."""
import time
from dataclasses import dataclass

import numpy as np

from . import qasm, statevec
from .errors import ValidationError


@dataclass(frozen=True)
class PostselectSpec:
    """Condition on ``ancilla == 1`` and every clock qubit ``== 0``."""

    ancilla_qubit: int
    clock_qubits: tuple = ()

    def mask_value(self):
        mask = 1 << self.ancilla_qubit
        for q in self.clock_qubits:
            mask |= 1 << q
        return mask, 1 << self.ancilla_qubit

    def to_json(self):
        return {"ancilla_qubit": self.ancilla_qubit, "clock_qubits": list(self.clock_qubits)}

    @classmethod
    def from_json(cls, obj):
        if obj is None:
            return None
        return cls(int(obj["ancilla_qubit"]), tuple(int(q) for q in obj.get("clock_qubits", ())))


@dataclass
class DeviceResult:
    amplitudes: np.ndarray
    p_success: float
    sim_time: float
    extract_time: float

    @property
    def device_time(self):
        return self.sim_time + self.extract_time


def run_circuit(circuit, readout_indices=(), postselect=None, qubit_cap=None):
    """Execute, optionally postselect, and read out the requested amplitudes.

    With no postselection ``p_success`` is 1.
    """
    t0 = time.perf_counter()
    state = qasm.execute(circuit, qubit_cap=qubit_cap)
    t1 = time.perf_counter()
    p = 1.0
    if postselect is not None:
        qubits = (postselect.ancilla_qubit,) + tuple(postselect.clock_qubits)
        for q in qubits:
            if not 0 <= q < state.n_qubits:
                raise ValidationError(f"postselect qubit {q} out of range for {state.n_qubits} qubits")
        mask, value = postselect.mask_value()
        state, p = statevec.postselect_mask(state, mask, value)
    amps = statevec.extract_amplitudes(state, readout_indices)
    t2 = time.perf_counter()
    return DeviceResult(amps, p, t1 - t0, t2 - t1)


class LocalExecutor:
    """In-process device (the single-job MPMD mode): a direct call on the caller's thread."""

    name = "local"

    def __init__(self, qubit_cap=None):
        self.qubit_cap = qubit_cap

    def execute(self, circuit, readout_indices=(), postselect=None):
        return run_circuit(circuit, readout_indices, postselect, qubit_cap=self.qubit_cap)
