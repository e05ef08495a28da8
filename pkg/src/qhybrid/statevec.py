"""Dense statevector simulator used as the quantum-device stand-in.

Qubit 0 is the least-significant bit of a basis-state index, so the
amplitude of ``|q_{n-1} ... q_1 q_0>`` lives at ``sum(q_j << j)``. Gate
matrices follow the same rule locally: bit ``j`` of a gate's row/column
index refers to ``targets[j]``.

Operations mutate the given :class:`StateVector` in place and return it.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    DegeneratePostselectionError,
    ResourceLimitError,
    ValidationError,
)

DEFAULT_QUBIT_CAP = 24
UNITARY_TOL = 1e-8
POSTSELECT_MIN_PROB = 1e-12


@dataclass
class SimConfig:
    qubit_cap: int = DEFAULT_QUBIT_CAP
    check_unitary: bool = True


CONFIG = SimConfig()


class StateVector:
    """Amplitudes of an ``n_qubits`` register (length ``2**n_qubits``)."""

    __slots__ = ("n_qubits", "amplitudes")

    def __init__(self, n_qubits, amplitudes):
        amplitudes = np.ascontiguousarray(amplitudes, dtype=np.complex128)
        if amplitudes.shape != (1 << n_qubits,):
            raise ValidationError(
                f"expected {1 << n_qubits} amplitudes for {n_qubits} qubits, got shape {amplitudes.shape}"
            )
        self.n_qubits = n_qubits
        self.amplitudes = amplitudes

    @classmethod
    def from_amplitudes(cls, amplitudes):
        amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        n = amplitudes.shape[0].bit_length() - 1
        if amplitudes.ndim != 1 or amplitudes.shape[0] != 1 << n or n < 1:
            raise ValidationError("amplitude vector length must be a power of two >= 2")
        return cls(n, amplitudes.copy())

    def copy(self):
        return StateVector(self.n_qubits, self.amplitudes.copy())

    def norm(self):
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def __len__(self):
        return self.amplitudes.shape[0]

    def __repr__(self):
        return f"StateVector(n_qubits={self.n_qubits})"


def new_zero_state(n_qubits, qubit_cap=None):
    """Return ``|0...0>`` on ``n_qubits`` qubits."""
    cap = CONFIG.qubit_cap if qubit_cap is None else qubit_cap
    if n_qubits > cap:
        raise ResourceLimitError(f"{n_qubits} qubits requested, qubit cap is {cap}", cap=cap)
    if n_qubits < 1:
        raise ValidationError(f"need at least one qubit, got {n_qubits}")
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def is_unitary(matrix, tol=UNITARY_TOL):
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    return bool(np.allclose(m.conj().T @ m, np.eye(m.shape[0]), rtol=0.0, atol=tol))


def _check_qubits(state, qubits, what):
    for q in qubits:
        if not 0 <= q < state.n_qubits:
            raise ValidationError(f"{what} qubit {q} out of range for {state.n_qubits} qubits")
    if len(set(qubits)) != len(qubits):
        raise ValidationError(f"{what} qubits must be distinct, got {list(qubits)}")


def _prepare_gate(gate, n_targets, check):
    gate = np.ascontiguousarray(gate, dtype=np.complex128)
    d = 1 << n_targets
    if gate.shape != (d, d):
        raise ValidationError(f"gate of shape {gate.shape} does not act on {n_targets} qubit(s)")
    if check and not is_unitary(gate):
        raise ValidationError("gate matrix is not unitary within tolerance 1e-8")
    return gate


def apply_controlled(state, gate, controls, control_values, targets, check_unitary=None):
    """Apply ``gate`` on ``targets`` for amplitudes whose control bits match ``control_values``."""
    controls = [int(c) for c in controls]
    control_values = [int(v) for v in control_values]
    targets = [int(t) for t in targets]
    if len(controls) != len(control_values):
        raise ValidationError("need exactly one control value per control qubit")
    if any(v not in (0, 1) for v in control_values):
        raise ValidationError(f"control values must be bits, got {control_values}")
    if not targets:
        raise ValidationError("gate needs at least one target qubit")
    _check_qubits(state, targets, "target")
    _check_qubits(state, controls, "control")
    if set(controls) & set(targets):
        raise ValidationError(f"controls {controls} overlap targets {targets}")
    check = CONFIG.check_unitary if check_unitary is None else check_unitary
    gate = _prepare_gate(gate, len(targets), check)
    mask = value = 0
    for c, v in zip(controls, control_values):
        mask |= 1 << c
        value |= v << c
    kernels.apply_gate(state.amplitudes, gate, np.asarray(targets, dtype=np.int64), mask, value)
    return state


def apply_unitary(state, gate, targets, check_unitary=None):
    """Apply ``gate`` on the ordered ``targets`` (identity elsewhere)."""
    return apply_controlled(state, gate, (), (), targets, check_unitary=check_unitary)


def extract_amplitudes(state, indices=()):
    """Requested amplitudes in request order; an empty request returns all of them."""
    if len(indices) == 0:
        return state.amplitudes.copy()
    idx = np.asarray(indices, dtype=np.int64)
    size = len(state)
    bad = idx[(idx < 0) | (idx >= size)]
    if bad.size:
        raise ValidationError(f"basis index {int(bad[0])} out of range for {size} amplitudes")
    return state.amplitudes[idx]


def postselect_mask(state, mask, value):
    """Condition on ``index & mask == value``; returns ``(state, probability)``."""
    idx = np.arange(len(state), dtype=np.int64)
    keep = (idx & mask) == value
    p = float(np.sum(np.abs(state.amplitudes[keep]) ** 2))
    if p < POSTSELECT_MIN_PROB:
        raise DegeneratePostselectionError(
            f"postselected outcome has probability {p:.3e} (< {POSTSELECT_MIN_PROB:g})", probability=p
        )
    state.amplitudes[~keep] = 0.0
    state.amplitudes /= np.sqrt(p)
    return state, p


def postselect(state, qubit, value):
    """Condition ``qubit`` on ``value``; returns the renormalized state and the outcome probability."""
    _check_qubits(state, [qubit], "postselect")
    if value not in (0, 1):
        raise ValidationError(f"postselect value must be 0 or 1, got {value}")
    return postselect_mask(state, 1 << qubit, value << qubit)
