"""qasm-lite: the circuit text format shipped between application and device.

Grammar::

    program   := "qubits" INT ";" { instr }
    instr     := simple | rot | ctrl | mcry | unitary
    simple    := ("h"|"x") INT ";" | "cx" INT INT ";" | "swap" INT INT ";"
    rot       := ("rx"|"ry"|"rz") "(" FLOAT ")" INT ";"
    ctrl      := "cry" "(" FLOAT ")" INT INT ";"
    mcry      := "mcry" "(" FLOAT ")" "c[" ctrlspec { "," ctrlspec } "]" INT ";"
    ctrlspec  := INT "=" ("0"|"1")
    unitary   := ("unitary" | "cunitary" "c[" ctrlspec { "," ctrlspec } "]")
                 "t[" INT { "," INT } "]" B64BLOB ";"

``#`` starts a comment running to end of line. Matrix payloads are row-major
complex128 entries, each stored as little-endian ``(re, im)`` binary64 pairs,
base64 encoded. Angles are radians written with 17 significant digits, so
:func:`serialize` and :func:`parse` round-trip bit-exactly.

Qubit numbering follows :mod:`qhybrid.statevec` (qubit 0 is the LSB); inside
``t[...]`` the first listed qubit is bit 0 of the matrix index.
"""
import base64
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import statevec
from .errors import (
    DegeneratePostselectionError,
    ExecutionError,
    QasmError,
    ResourceLimitError,
    ValidationError,
)

KINDS = ("H", "X", "RX", "RY", "RZ", "CX", "CRY", "SWAP", "UNITARY", "CUNITARY", "MCRY")
_ROTATIONS = ("RX", "RY", "RZ", "CRY", "MCRY")

_HADAMARD = np.array([[1, 1], [1, -1]], dtype=np.complex128) / math.sqrt(2)
_PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=np.complex128)


def rx_matrix(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)


def ry_matrix(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def rz_matrix(theta):
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=np.complex128)


@dataclass(frozen=True, eq=False)
class Instruction:
    """One gate. ``controls`` holds ``(qubit, required_bit)`` pairs."""

    kind: str
    targets: tuple
    params: tuple = ()
    controls: tuple = ()
    matrix: np.ndarray = None

    def __eq__(self, other):
        if not isinstance(other, Instruction):
            return NotImplemented
        if (self.kind, self.targets, self.params, self.controls) != (
            other.kind,
            other.targets,
            other.params,
            other.controls,
        ):
            return False
        if self.matrix is None or other.matrix is None:
            return self.matrix is None and other.matrix is None
        return self.matrix.shape == other.matrix.shape and self.matrix.tobytes() == other.matrix.tobytes()

    def __hash__(self):
        return hash((self.kind, self.targets, self.params, self.controls))

    def qubits(self):
        return tuple(q for q, _ in self.controls) + self.targets

    def gate(self):
        """``(matrix, controls, control_values, targets)`` ready for the simulator."""
        k = self.kind
        ctrl = [q for q, _ in self.controls]
        vals = [v for _, v in self.controls]
        if k == "H":
            m = _HADAMARD
        elif k in ("X", "CX"):
            m = _PAULI_X
        elif k == "RX":
            m = rx_matrix(self.params[0])
        elif k in ("RY", "CRY", "MCRY"):
            m = ry_matrix(self.params[0])
        elif k == "RZ":
            m = rz_matrix(self.params[0])
        elif k == "SWAP":
            m = _SWAP
        else:
            m = self.matrix
        return m, ctrl, vals, list(self.targets)


# Constructors -------------------------------------------------------------

def h(q):
    return Instruction("H", (int(q),))


def x(q):
    return Instruction("X", (int(q),))


def rx(theta, q):
    return Instruction("RX", (int(q),), (float(theta),))


def ry(theta, q):
    return Instruction("RY", (int(q),), (float(theta),))


def rz(theta, q):
    return Instruction("RZ", (int(q),), (float(theta),))


def cx(control, target):
    return Instruction("CX", (int(target),), (), ((int(control), 1),))


def cry(theta, control, target):
    return Instruction("CRY", (int(target),), (float(theta),), ((int(control), 1),))


def swap(a, b):
    return Instruction("SWAP", (int(a), int(b)))


def mcry(theta, controls, target):
    """Multi-controlled RY; ``controls`` is a sequence of ``(qubit, bit)``."""
    return Instruction("MCRY", (int(target),), (float(theta),), tuple((int(q), int(v)) for q, v in controls))


def _freeze(matrix):
    m = np.array(matrix, dtype=np.complex128, order="C")
    m.setflags(write=False)
    return m


def unitary(matrix, targets):
    return Instruction("UNITARY", tuple(int(t) for t in targets), (), (), _freeze(matrix))


def cunitary(matrix, controls, targets):
    return Instruction(
        "CUNITARY",
        tuple(int(t) for t in targets),
        (),
        tuple((int(q), int(v)) for q, v in controls),
        _freeze(matrix),
    )


def validate_instruction(ins, n_qubits, check_unitary=True):
    """Raise :class:`ValidationError` when ``ins`` breaks an Instruction invariant."""
    k = ins.kind
    if k not in KINDS:
        raise ValidationError(f"unknown instruction kind {k!r}")
    n_params = 1 if k in _ROTATIONS else 0
    if len(ins.params) != n_params:
        raise ValidationError(f"{k} takes {n_params} parameter(s), got {len(ins.params)}")
    if any(not math.isfinite(p) for p in ins.params):
        raise ValidationError(f"{k} angle must be finite")
    n_targets = {"SWAP": 2, "UNITARY": None, "CUNITARY": None}.get(k, 1)
    if n_targets is not None and len(ins.targets) != n_targets:
        raise ValidationError(f"{k} takes {n_targets} target(s), got {len(ins.targets)}")
    if not ins.targets:
        raise ValidationError(f"{k} needs at least one target")
    nc = len(ins.controls)
    if k in ("CX", "CRY"):
        if nc != 1 or ins.controls[0][1] != 1:
            raise ValidationError(f"{k} takes exactly one control requiring bit 1")
    elif k in ("MCRY", "CUNITARY"):
        if nc < 1:
            raise ValidationError(f"{k} needs at least one control")
    elif nc:
        raise ValidationError(f"{k} takes no controls")
    for _, v in ins.controls:
        if v not in (0, 1):
            raise ValidationError(f"control value must be 0 or 1, got {v}")
    qs = ins.qubits()
    for q in qs:
        if not 0 <= q < n_qubits:
            raise ValidationError(f"qubit index {q} out of range for {n_qubits} qubits")
    if len(set(qs)) != len(qs):
        raise ValidationError(f"{k} references a qubit more than once: {list(qs)}")
    if k in ("UNITARY", "CUNITARY"):
        m = ins.matrix
        d = 1 << len(ins.targets)
        if m is None or m.shape != (d, d):
            raise ValidationError(f"{k} on {len(ins.targets)} qubit(s) needs a {d}x{d} matrix")
        if check_unitary and not statevec.is_unitary(m):
            raise ValidationError(f"{k} matrix is not unitary within 1e-8")
    elif ins.matrix is not None:
        raise ValidationError(f"{k} does not carry a matrix")


@dataclass(eq=False)
class Circuit:
    n_qubits: int
    instructions: list = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, Circuit):
            return NotImplemented
        return self.n_qubits == other.n_qubits and self.instructions == other.instructions

    def __len__(self):
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)

    def append(self, ins):
        self.instructions.append(ins)
        return self

    def extend(self, instructions):
        self.instructions.extend(instructions)
        return self

    def validate(self, check_unitary=True):
        if self.n_qubits < 1:
            raise ValidationError(f"circuit needs at least one qubit, got {self.n_qubits}")
        for i, ins in enumerate(self.instructions):
            try:
                validate_instruction(ins, self.n_qubits, check_unitary)
            except ValidationError as exc:
                raise ValidationError(f"instruction {i}: {exc}") from None
        return self


# Serialization -------------------------------------------------------------

def format_float(value):
    return format(float(value), ".17g")


def encode_matrix(matrix):
    return base64.b64encode(np.asarray(matrix, dtype="<c16").tobytes()).decode("ascii")


def decode_matrix(blob, dim):
    raw = base64.b64decode(blob, validate=True)
    if len(raw) != 16 * dim * dim:
        raise ValueError(f"matrix payload has {len(raw)} bytes, expected {16 * dim * dim} for {dim}x{dim}")
    return np.frombuffer(raw, dtype="<c16").astype(np.complex128).reshape(dim, dim)


def _ctrlspec(controls):
    return "c[" + ",".join(f"{q}={v}" for q, v in controls) + "]"


def _line(ins):
    k = ins.kind
    if k in ("H", "X"):
        return f"{k.lower()} {ins.targets[0]};"
    if k == "CX":
        return f"cx {ins.controls[0][0]} {ins.targets[0]};"
    if k == "SWAP":
        return f"swap {ins.targets[0]} {ins.targets[1]};"
    if k in ("RX", "RY", "RZ"):
        return f"{k.lower()}({format_float(ins.params[0])}) {ins.targets[0]};"
    if k == "CRY":
        return f"cry({format_float(ins.params[0])}) {ins.controls[0][0]} {ins.targets[0]};"
    if k == "MCRY":
        return f"mcry({format_float(ins.params[0])}) {_ctrlspec(ins.controls)} {ins.targets[0]};"
    tspec = "t[" + ",".join(str(t) for t in ins.targets) + "]"
    if k == "UNITARY":
        return f"unitary {tspec} {encode_matrix(ins.matrix)};"
    return f"cunitary {_ctrlspec(ins.controls)} {tspec} {encode_matrix(ins.matrix)};"


def serialize(circuit):
    """Canonical text: one instruction per line, lowercase, single spaces."""
    circuit.validate()
    lines = [f"qubits {circuit.n_qubits};"]
    lines.extend(_line(ins) for ins in circuit.instructions)
    return "\n".join(lines) + "\n"


# Parsing -------------------------------------------------------------------

_SKIP = re.compile(r"(?:\s+|#[^\n]*)*")
_INT = re.compile(r"\d+")
_FLOAT = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_WORD = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_BLOB = re.compile(r"[A-Za-z0-9+/]+={0,2}")
_BIT = re.compile(r"[01](?![0-9])")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    offset: int


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0
        self.tokens = []

    def error(self, message, offset=None):
        offset = self.pos if offset is None else offset
        line = self.text.count("\n", 0, offset) + 1
        col = offset - (self.text.rfind("\n", 0, offset) + 1) + 1
        return QasmError(message, line=line, col=col, offset=offset)

    def skip(self):
        self.pos = _SKIP.match(self.text, self.pos).end()

    def at_end(self):
        self.skip()
        return self.pos >= len(self.text)

    def _found(self):
        if self.pos >= len(self.text):
            return "end of input"
        return repr(self.text[self.pos : self.pos + 12])

    def _take(self, regex, kind, what):
        self.skip()
        m = regex.match(self.text, self.pos)
        if not m or not m.group():
            raise self.error(f"expected {what}, found {self._found()}")
        tok = Token(kind, m.group(), self.pos)
        self.tokens.append(tok)
        self.pos = m.end()
        return tok

    def literal(self, s):
        self.skip()
        if not self.text.startswith(s, self.pos):
            raise self.error(f"expected {s!r}, found {self._found()}")
        self.tokens.append(Token("punct", s, self.pos))
        self.pos += len(s)

    def integer(self):
        tok = self._take(_INT, "int", "integer")
        nxt = self.text[self.pos : self.pos + 1]
        if nxt and (nxt.isalnum() or nxt in "._"):
            raise self.error(f"malformed integer near {self._found()}")
        return int(tok.text), tok.offset

    def number(self):
        tok = self._take(_FLOAT, "float", "number")
        nxt = self.text[self.pos : self.pos + 1]
        if nxt and (nxt.isalnum() or nxt in "._"):
            raise self.error(f"malformed number near {self._found()}")
        value = float(tok.text)
        if not math.isfinite(value):
            raise self.error("angle must be finite", tok.offset)
        return value

    def word(self):
        return self._take(_WORD, "word", "instruction keyword")

    def qubit(self, n_qubits):
        q, off = self.integer()
        if q >= n_qubits:
            raise self.error(f"qubit index {q} out of declared range 0..{n_qubits - 1}", off)
        return q

    def angle(self):
        self.literal("(")
        theta = self.number()
        self.literal(")")
        return theta

    def ctrlspec(self, n_qubits):
        self.literal("c[")
        specs = []
        while True:
            q = self.qubit(n_qubits)
            self.literal("=")
            bit = self._take(_BIT, "bit", "control bit 0 or 1")
            specs.append((q, int(bit.text)))
            self.skip()
            if self.text.startswith(",", self.pos):
                self.literal(",")
                continue
            self.literal("]")
            return tuple(specs)

    def tspec(self, n_qubits):
        self.literal("t[")
        targets = [self.qubit(n_qubits)]
        while True:
            self.skip()
            if self.text.startswith(",", self.pos):
                self.literal(",")
                targets.append(self.qubit(n_qubits))
                continue
            self.literal("]")
            return tuple(targets)

    def blob(self, dim):
        tok = self._take(_BLOB, "blob", "base64 matrix payload")
        try:
            return decode_matrix(tok.text, dim)
        except ValueError as exc:
            raise self.error(f"malformed matrix payload: {exc}", tok.offset) from None

    def program(self):
        kw = self.word()
        if kw.text != "qubits":
            raise self.error(f"program must start with 'qubits', found {kw.text!r}", kw.offset)
        n, off = self.integer()
        if n < 1:
            raise self.error("qubit count must be at least 1", off)
        self.literal(";")
        instructions = []
        while not self.at_end():
            instructions.append(self.instruction(n))
        return Circuit(n, instructions)

    def instruction(self, n):
        kw = self.word()
        name = kw.text
        start = kw.offset
        if name in ("h", "x"):
            ins = Instruction(name.upper(), (self.qubit(n),))
        elif name in ("cx", "swap"):
            a = self.qubit(n)
            b = self.qubit(n)
            ins = cx(a, b) if name == "cx" else swap(a, b)
        elif name in ("rx", "ry", "rz"):
            theta = self.angle()
            ins = Instruction(name.upper(), (self.qubit(n),), (theta,))
        elif name == "cry":
            theta = self.angle()
            c = self.qubit(n)
            ins = cry(theta, c, self.qubit(n))
        elif name == "mcry":
            theta = self.angle()
            controls = self.ctrlspec(n)
            ins = mcry(theta, controls, self.qubit(n))
        elif name in ("unitary", "cunitary"):
            controls = self.ctrlspec(n) if name == "cunitary" else ()
            targets = self.tspec(n)
            m = self.blob(1 << len(targets))
            ins = Instruction(name.upper(), targets, (), controls, _freeze(m))
        else:
            raise self.error(f"unknown instruction {name!r}", start)
        self.literal(";")
        try:
            validate_instruction(ins, n)
        except ValidationError as exc:
            raise self.error(str(exc), start) from None
        return ins


def parse(text):
    """Parse qasm-lite ``text`` into a validated :class:`Circuit`.

    Raises :class:`QasmError` carrying line, column and offset.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise QasmError(f"payload is not UTF-8: {exc}", offset=exc.start) from None
    return _Parser(text).program()


def tokenize(text):
    """Tokens of a valid program, with source offsets."""
    p = _Parser(text)
    p.program()
    return p.tokens


# Execution -----------------------------------------------------------------

def execute(circuit, initial=None, qubit_cap=None):
    """Run ``circuit`` on ``initial`` (default ``|0...0>``) and return the final state."""
    if initial is None:
        state = statevec.new_zero_state(circuit.n_qubits, qubit_cap=qubit_cap)
    else:
        if initial.n_qubits != circuit.n_qubits:
            raise ValidationError(
                f"initial state has {initial.n_qubits} qubits, circuit declares {circuit.n_qubits}"
            )
        state = initial
    for i, ins in enumerate(circuit.instructions):
        m, ctrl, vals, targets = ins.gate()
        try:
            statevec.apply_controlled(state, m, ctrl, vals, targets)
        except (ValidationError, ResourceLimitError, DegeneratePostselectionError) as exc:
            raise ExecutionError(str(exc), index=i) from exc
    return state
