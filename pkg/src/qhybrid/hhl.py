"""Local HHL circuit synthesis and solution recovery.

Register layout for a system of dimension ``N = 2**n`` with ``m`` clock qubits::

    qubits 0 .. n-1        state register (amplitude-encoded b, then x)
    qubits n .. n+m-1      clock register (clock qubit k has weight 2**k)
    qubit  n+m             ancilla (1 heralds a successful inversion)

The circuit is split in two fragments. The matrix block (phase estimation,
eigenvalue inversion, uncomputation) depends only on ``A`` and is reused
across right-hand sides; the rhs block prepares ``b/||b||`` and is rebuilt
per solve. :func:`assemble` concatenates them without touching either.

Eigenphases use ``U = exp(i * scale * A * t)``: clock value ``v`` stands for
the scaled eigenvalue ``2*pi*v / (t * 2**m)``.
"""
import functools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import qasm
from .device import LocalExecutor, PostselectSpec
from .errors import CalibrationError, ConditioningError, NumericError, ValidationError
from .statevec import postselect_mask

HERMITIAN_TOL = 1e-10
PAULI_TOL = 1e-12
SINGULAR_RTOL = 1e-8
SPECTRAL_ITERS = 200
M_CLOCK_RANGE = (2, 8)
DEFAULT_M_CLOCK = 6
PHASES = ("synthesis", "transfer", "simulation", "extraction")

_ANGLE_EPS = 1e-14


# Linear systems -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearSystem:
    """A prepared (Hermitian, power-of-two) system plus how to undo the preparation."""

    matrix: np.ndarray
    rhs: np.ndarray
    spectral_bounds: tuple
    condition_number: float
    original_dim: int
    dilated: bool = False
    embedded_dim: int = 0
    positive: bool = True

    @property
    def dimension(self):
        return self.matrix.shape[0]

    @property
    def n_state(self):
        return self.dimension.bit_length() - 1

    def embed_rhs(self, b):
        """Map an original-size rhs into the prepared space."""
        b = np.asarray(b, dtype=np.complex128).ravel()
        if b.shape[0] != self.original_dim:
            raise ValidationError(f"rhs has length {b.shape[0]}, system expects {self.original_dim}")
        if not np.any(b):
            raise ValidationError("right-hand side must not be the zero vector")
        out = np.zeros(self.dimension, dtype=np.complex128)
        out[: self.original_dim] = b
        return out

    def with_rhs(self, b):
        """Same matrix and spectral data, new right-hand side."""
        return replace(self, rhs=self.embed_rhs(b))

    def unembed(self, x):
        """Solution of the original system from a solution of the prepared one."""
        x = np.asarray(x)[: self.embedded_dim]
        if self.dilated:
            n0 = self.original_dim
            return x[n0 : 2 * n0]
        return x


def hermitian_dilation(a):
    """``[[0, A], [A^H, 0]]``; solving it against ``(b, 0)`` yields ``(0, A^{-1} b)``."""
    a = np.asarray(a, dtype=np.complex128)
    n = a.shape[0]
    out = np.zeros((2 * n, 2 * n), dtype=np.complex128)
    out[:n, n:] = a
    out[n:, :n] = a.conj().T
    return out


def gershgorin_bounds(a):
    d = np.real(np.diag(a))
    r = np.sum(np.abs(a), axis=1) - np.abs(np.diag(a))
    return float(np.min(d - r)), float(np.max(d + r))


def _start_vector(n):
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def _rayleigh_iteration(op, a, iters, tol):
    """Power iteration on ``op``; returns the Rayleigh quotient of ``a`` at the limit vector."""
    v = _start_vector(a.shape[0])
    rq = float(np.vdot(v, a @ v).real)
    for _ in range(iters):
        w = op(v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return rq  # v already spans the eigenspace at the shift
        if not np.isfinite(nrm):
            raise NumericError("power iteration broke down")
        v = w / nrm
        new = float(np.vdot(v, a @ v).real)
        if abs(new - rq) <= tol * max(abs(new), 1e-300):
            return new
        rq = new
    return rq


def estimate_spectrum(a, positive=True, iters=SPECTRAL_ITERS, tol=1e-15):
    """``(lambda_min_est, lambda_max_est)`` of a Hermitian matrix.

    Inverse iteration gives the small end; power iteration shifted by that
    estimate gives the large end, capped by the Gershgorin discs. Both are
    Rayleigh quotients, so they lie inside the true spectrum. With
    ``positive=False`` the bounds are on ``|lambda|``.
    """
    g_lo, g_hi = gershgorin_bounds(a)
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError:
        raise ConditioningError("matrix is singular") from None
    if positive:
        lmin = _rayleigh_iteration(lambda v: inv @ v, a, iters, tol)
        shift = max(min(lmin, g_hi), g_lo)
        lmax = _rayleigh_iteration(lambda v: a @ v - shift * v, a, iters, tol)
        lmax = min(max(lmax, lmin), g_hi)
    else:
        lmax = abs(_rayleigh_iteration(lambda v: a @ v, a, iters, tol))
        lmin = abs(_rayleigh_iteration(lambda v: inv @ v, a, iters, tol))
    return lmin, lmax


def prepare_system(a_raw, b_raw, require_positive=True):
    """Validate, Hermitian-dilate and pad ``(A, b)`` into a :class:`LinearSystem`.

    Non-Hermitian matrices are replaced by their Hermitian dilation with
    ``b`` padded by zeros. The dimension is then padded to a power of two
    with identity rows/columns. The dilation is never positive definite, so
    it needs ``require_positive=False`` (bounds then refer to ``|lambda|``).
    """
    a = np.array(a_raw, dtype=np.complex128)
    b = np.array(b_raw, dtype=np.complex128).ravel()
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValidationError(f"matrix must be square, got shape {a.shape}")
    n0 = a.shape[0]
    if b.shape[0] != n0:
        raise ValidationError(f"rhs has length {b.shape[0]}, matrix is {n0}x{n0}")
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
        raise ValidationError("matrix and rhs must be finite")
    if not np.any(b):
        raise ValidationError("right-hand side must not be the zero vector")

    dilated = np.max(np.abs(a - a.conj().T)) > HERMITIAN_TOL
    if dilated:
        a = hermitian_dilation(a)
        b = np.concatenate([b, np.zeros(n0, dtype=np.complex128)])
    d = a.shape[0]
    dim = max(2, 1 << (d - 1).bit_length())
    if dim != d:
        padded = np.eye(dim, dtype=np.complex128)
        padded[:d, :d] = a
        a = padded
        b = np.concatenate([b, np.zeros(dim - d, dtype=np.complex128)])

    if require_positive:
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise ConditioningError(
                "matrix is not positive definite (negative or zero eigenvalues are unsupported)"
            ) from None
    lmin, lmax = estimate_spectrum(a, positive=require_positive)
    if not lmin > 0 or lmin < SINGULAR_RTOL * lmax:
        raise ConditioningError(f"matrix is singular to tolerance (lambda_min ~ {lmin:.3e}, lambda_max ~ {lmax:.3e})")
    a.setflags(write=False)
    return LinearSystem(
        matrix=a,
        rhs=b,
        spectral_bounds=(lmin, lmax),
        condition_number=lmax / lmin,
        original_dim=n0,
        dilated=bool(dilated),
        embedded_dim=d,
        positive=require_positive,
    )


# Pauli decomposition ---------------------------------------------------------

_PAULI = {
    "I": np.eye(2, dtype=np.complex128),
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}
_LETTER = {(0, 0): "I", (1, 0): "X", (1, 1): "Y", (0, 1): "Z"}


@dataclass(frozen=True)
class PauliTerm:
    """``coefficient * P`` where ``word[0]`` acts on the most significant qubit."""

    coefficient: float
    word: str


def _walsh_hadamard(f):
    """Unnormalized Walsh-Hadamard transform along the last axis."""
    f = f.copy()
    n = f.shape[-1]
    h = 1
    while h < n:
        f = f.reshape(f.shape[:-1] + (n // (2 * h), 2, h))
        lo, hi = f[..., 0, :].copy(), f[..., 1, :].copy()
        f[..., 0, :] = lo + hi
        f[..., 1, :] = lo - hi
        f = f.reshape(f.shape[:-3] + (n,))
        h *= 2
    return f


def pauli_decompose(a, tol=PAULI_TOL):
    """Real Pauli coefficients ``trace(P A) / N`` of a Hermitian matrix.

    Uses ``trace(P A) = i^{|x&z|} * sum_k (-1)^{popcount(k&z)} A[k, k^x]`` for the
    Pauli with X-mask ``x`` and Z-mask ``z``: one Walsh-Hadamard transform per
    X-mask, O(N^2 log N) overall.
    """
    a = np.asarray(a, dtype=np.complex128)
    dim = a.shape[0]
    n = dim.bit_length() - 1
    if a.shape != (dim, dim) or dim != 1 << n or n < 1:
        raise ValidationError(f"matrix must be 2^n x 2^n with n >= 1, got shape {a.shape}")
    if np.max(np.abs(a - a.conj().T)) > HERMITIAN_TOL:
        raise ValidationError("Pauli decomposition needs a Hermitian matrix")
    k = np.arange(dim)
    xs = np.arange(dim)
    f = a[k[None, :], k[None, :] ^ xs[:, None]]  # f[x, k] = A[k, k^x]
    w = _walsh_hadamard(f)  # w[x, z]
    zs = np.arange(dim)
    yc = np.array([bin(int(v)).count("1") for v in range(dim)])[xs[:, None] & zs[None, :]]
    coeffs = (1j ** yc) * w / dim
    terms = []
    for x in range(dim):
        for z in range(dim):
            c = coeffs[x, z]
            if abs(c) < tol:
                continue
            word = "".join(_LETTER[((x >> q) & 1, (z >> q) & 1)] for q in reversed(range(n)))
            terms.append(PauliTerm(float(c.real), word))
    terms.sort(key=lambda t: t.word)
    return terms


def pauli_matrix(word):
    m = np.ones((1, 1), dtype=np.complex128)
    for ch in word:
        m = np.kron(m, _PAULI[ch])
    return m


def pauli_reconstruct(terms, n):
    """Dense ``sum_P c_P * P``."""
    out = np.zeros((1 << n, 1 << n), dtype=np.complex128)
    for term in terms:
        if len(term.word) != n or any(ch not in _PAULI for ch in term.word):
            raise ValidationError(f"Pauli word {term.word!r} is not a length-{n} word over IXYZ")
        out += term.coefficient * pauli_matrix(term.word)
    return out


# Calibration and synthesis ---------------------------------------------------

def _check_m_clock(m_clock):
    lo, hi = M_CLOCK_RANGE
    if not lo <= m_clock <= hi:
        raise ValidationError(f"m_clock must be in [{lo}, {hi}], got {m_clock}")


def calibrate(system, m_clock, t=None, scale=None):
    """Return ``(t, C, scale)``.

    Default: ``scale = 1`` and ``t`` puts ``lambda_max_est`` on the top clock
    value ``2**m - 1``. Passing ``t`` (exact-phase override) pins the evolution
    time for the spectrally normalized matrix, ``scale = 1/lambda_max_est``,
    unless ``scale`` is given too. ``C`` is the smallest representable
    eigenvalue, ``2*pi / (t * 2**m)``.
    """
    _check_m_clock(m_clock)
    lmin, lmax = system.spectral_bounds
    big_m = 1 << m_clock
    if t is None:
        scale = 1.0 if scale is None else float(scale)
        t = 2 * math.pi * (1 - 1 / big_m) / (scale * lmax)
    else:
        t = float(t)
        scale = 1.0 / lmax if scale is None else float(scale)
    if not (t > 0 and scale > 0):
        raise CalibrationError(f"evolution time and scale must be positive (t={t}, scale={scale})")
    c = 2 * math.pi / (t * big_m)
    if t * scale * lmax >= 2 * math.pi * (1 + 1e-12):
        raise CalibrationError(
            f"phase wraparound: t * scaled lambda_max = {t * scale * lmax:.6g} >= 2*pi"
        )
    if c > scale * lmin * (1 + 1e-9):
        raise CalibrationError(
            f"kappa ~ {lmax / lmin:.3g} is not resolvable with {m_clock} clock qubits "
            f"(C = {c:.4g} > scaled lambda_min = {scale * lmin:.4g}); increase m_clock"
        )
    return t, c, scale


def qft_instructions(qubits):
    """QFT with ``F[v, y] = exp(2*pi*i*v*y / M) / sqrt(M)``; ``qubits[0]`` is the LSB."""
    m = len(qubits)
    out = []
    for q in reversed(range(m)):
        out.append(qasm.h(qubits[q]))
        for j in reversed(range(q)):
            phase = 2 * math.pi / (1 << (q - j + 1))
            out.append(qasm.cunitary(np.diag([1.0, np.exp(1j * phase)]), [(qubits[j], 1)], [qubits[q]]))
    for q in range(m // 2):
        out.append(qasm.swap(qubits[q], qubits[m - 1 - q]))
    return out


def inverse_qft_instructions(qubits):
    out = []
    for ins in reversed(qft_instructions(qubits)):
        if ins.kind == "CUNITARY":
            ins = qasm.cunitary(ins.matrix.conj().T, ins.controls, ins.targets)
        out.append(ins)
    return out


def evolution_unitary(a, time_, method="exact", trotter_steps=1, terms=None):
    """``exp(i * a * time_)`` exactly (eigendecomposition) or by first-order Trotter over Pauli terms."""
    if method == "exact":
        try:
            w, v = np.linalg.eigh(a)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"eigendecomposition failed: {exc}") from None
        return (v * np.exp(1j * w * time_)) @ v.conj().T
    if method == "trotter":
        n = a.shape[0].bit_length() - 1
        terms = pauli_decompose(a) if terms is None else terms
        tau = time_ / trotter_steps
        step = np.eye(a.shape[0], dtype=np.complex128)
        for term in terms:
            ang = term.coefficient * tau
            step = (math.cos(ang) * np.eye(1 << n) + 1j * math.sin(ang) * pauli_matrix(term.word)) @ step
        return np.linalg.matrix_power(step, trotter_steps)
    raise ValidationError(f"unknown evolution method {method!r}")


def clock_eigenvalue(v, t, m_clock):
    return 2 * math.pi * v / (t * (1 << m_clock))


def inversion_angles(t, c, m_clock, floor=None):
    """MCRY angle per clock value (index 0 unused).

    ``floor`` clamps eigenvalue estimates from below: clock values under the
    known spectrum only carry phase-estimation leakage.
    """
    big_m = 1 << m_clock
    angles = [0.0] * big_m
    for v in range(1, big_m):
        lam = clock_eigenvalue(v, t, m_clock)
        if floor is not None and lam < floor:
            lam = floor
        angles[v] = 2 * math.asin(min(1.0, c / lam))
    return angles


def synth_matrix_block(
    system,
    m_clock,
    t,
    c,
    scale=1.0,
    evolution="exact",
    trotter_steps=1,
    eigen_filter=True,
):
    """Phase estimation, eigenvalue inversion and uncomputation on ``n + m + 1`` qubits."""
    _check_m_clock(m_clock)
    n = system.n_state
    state = list(range(n))
    clock = [n + k for k in range(m_clock)]
    anc = n + m_clock
    a = system.matrix * scale
    if evolution == "exact":
        try:
            w, vecs = np.linalg.eigh(a)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"eigendecomposition failed: {exc}") from None

        def power(k, sign):
            return (vecs * np.exp(sign * 1j * w * t * (1 << k))) @ vecs.conj().T
    else:
        terms = pauli_decompose(a)

        def power(k, sign):
            return evolution_unitary(a, sign * t * (1 << k), "trotter", trotter_steps, terms)

    fwd = [qasm.cunitary(power(k, +1), [(clock[k], 1)], state) for k in range(m_clock)]
    bwd = [qasm.cunitary(power(k, -1), [(clock[k], 1)], state) for k in reversed(range(m_clock))]

    floor = scale * system.spectral_bounds[0] * (1 - 1e-9) if eigen_filter else None
    angles = inversion_angles(t, c, m_clock, floor)
    rotations = []
    for v in range(1, 1 << m_clock):
        ctrl = [(clock[k], (v >> k) & 1) for k in range(m_clock)]
        rotations.append(qasm.mcry(angles[v], ctrl, anc))

    ins = [qasm.h(q) for q in clock]
    ins += fwd
    ins += inverse_qft_instructions(clock)
    ins += rotations
    ins += qft_instructions(clock)
    ins += bwd
    ins += [qasm.h(q) for q in clock]
    return qasm.Circuit(n + m_clock + 1, ins).validate()


def matrix_block_size(m_clock):
    """Instruction count of :func:`synth_matrix_block`."""
    qft = m_clock + m_clock * (m_clock - 1) // 2 + m_clock // 2
    return 4 * m_clock + 2 * qft + (1 << m_clock) - 1


# Right-hand side -------------------------------------------------------------

def _gray(i):
    return i ^ (i >> 1)


@functools.lru_cache(maxsize=None)
def _gray_tables(k):
    """Transposed sign matrix ``(-1)**popcount(p & gray(i))`` and the control flipped after step ``i``."""
    size = 1 << k
    parity = np.array([[bin(p & _gray(i)).count("1") & 1 for i in range(size)] for p in range(size)])
    signs_t = np.ascontiguousarray((1 - 2 * parity).T, dtype=float)
    signs_t.setflags(write=False)
    changed = tuple((_gray(i) ^ _gray((i + 1) % size)).bit_length() - 1 for i in range(size))
    return signs_t, changed


def _uniformly_controlled(kind, alphas, controls, target):
    """Rotations ``R(alphas[p])`` on ``target`` selected by the control value ``p``.

    Gray-code decomposition into ``2**k`` single rotations and ``2**k`` CX;
    bit ``j`` of ``p`` is qubit ``controls[j]``.
    """
    make = qasm.ry if kind == "RY" else qasm.rz
    k = len(controls)
    alphas = np.asarray(alphas, dtype=float)
    if k == 0:
        return [] if abs(alphas[0]) < _ANGLE_EPS else [make(alphas[0], target)]
    signs_t, changed = _gray_tables(k)
    thetas = (signs_t @ alphas / (1 << k)).tolist()
    if max(map(abs, thetas)) < _ANGLE_EPS:
        return []
    out = []
    for theta, bit in zip(thetas, changed):
        if abs(theta) >= _ANGLE_EPS:
            out.append(make(theta, target))
        out.append(qasm.cx(controls[bit], target))
    return out


def state_preparation(amplitudes):
    """Instructions mapping ``|0...0>`` to the normalized ``amplitudes``."""
    a = np.asarray(amplitudes, dtype=np.complex128)
    dim = a.shape[0]
    n = dim.bit_length() - 1
    sq = a.real**2 + a.imag**2
    phi = np.where(sq > 0, np.angle(a), 0.0)
    # levels[q][j]: weight of the block of 2**q amplitudes whose high bits are j
    levels = [sq]
    for _ in range(n - 1):
        levels.append(levels[-1].reshape(-1, 2).sum(axis=1))
    flat = np.concatenate(levels)
    all_alphas = 2 * np.arctan2(np.sqrt(flat[1::2]), np.sqrt(flat[0::2]))
    offsets = np.cumsum([0] + [len(lv) // 2 for lv in levels])
    out = []
    for q in reversed(range(n)):
        alphas = all_alphas[offsets[q] : offsets[q + 1]]
        if q == n - 1 and abs(alphas[0] - math.pi / 2) < 1e-15:
            out.append(qasm.h(q))
        else:
            out.extend(_uniformly_controlled("RY", alphas, list(range(q + 1, n)), q))
    if not phi.any():
        return out
    omega = phi
    for q in range(n):
        pairs = omega.reshape(-1, 2)
        beta = pairs[:, 1] - pairs[:, 0]
        out.extend(_uniformly_controlled("RZ", beta, list(range(q + 1, n)), q))
        omega = pairs.mean(axis=1)
    gamma = float(omega[0])
    if abs(gamma) >= _ANGLE_EPS:
        out.append(qasm.unitary(np.exp(1j * gamma) * np.eye(2), [0]))
    return out


@dataclass(frozen=True)
class RhsBlock:
    circuit: qasm.Circuit
    norm: float


def synth_rhs_block(b):
    """State-preparation fragment for ``b/||b||`` on ``log2(len(b))`` qubits, plus ``||b||``."""
    b = np.asarray(b, dtype=np.complex128).ravel()
    dim = b.shape[0]
    n = dim.bit_length() - 1
    if dim != 1 << n or n < 1:
        raise ValidationError(f"rhs length must be a power of two >= 2, got {dim}")
    norm = float(np.linalg.norm(b))
    if norm == 0.0:
        raise ValidationError("right-hand side must not be the zero vector")
    return RhsBlock(qasm.Circuit(n, state_preparation(b / norm)), norm)


# Plans -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HhlPlan:
    n_state: int
    m_clock: int
    t: float
    C: float
    scale: float
    a_block: qasm.Circuit
    b_block: qasm.Circuit = None
    norm_b: float = 1.0
    system: LinearSystem = field(default=None, repr=False)

    @property
    def n_qubits(self):
        return self.n_state + self.m_clock + 1

    @property
    def qubit_layout(self):
        n, m = self.n_state, self.m_clock
        return {"state": tuple(range(n)), "clock": tuple(range(n, n + m)), "ancilla": n + m}

    def postselect_spec(self):
        lay = self.qubit_layout
        return PostselectSpec(lay["ancilla"], lay["clock"])

    def solution_indices(self):
        """Basis indices of the state register with clock = 0 and ancilla = 1."""
        base = 1 << (self.n_state + self.m_clock)
        return [base | i for i in range(1 << self.n_state)]

    def with_rhs(self, rhs_block):
        return replace(self, b_block=rhs_block.circuit, norm_b=rhs_block.norm)


def build_plan(system, m_clock=DEFAULT_M_CLOCK, t=None, scale=None, evolution="exact", trotter_steps=1, eigen_filter=True):
    """Calibrate and synthesize the reusable matrix block (no rhs yet)."""
    t, c, scale = calibrate(system, m_clock, t=t, scale=scale)
    a_block = synth_matrix_block(
        system, m_clock, t, c, scale=scale, evolution=evolution, trotter_steps=trotter_steps, eigen_filter=eigen_filter
    )
    return HhlPlan(system.n_state, m_clock, t, c, scale, a_block, system=system)


def assemble(a_block, b_block):
    """``b_block`` followed by ``a_block`` on the matrix block's register."""
    if b_block.n_qubits > a_block.n_qubits:
        raise ValidationError(
            f"rhs block uses {b_block.n_qubits} qubits, matrix block only {a_block.n_qubits}"
        )
    for ins in b_block.instructions:
        if max(ins.qubits()) >= b_block.n_qubits:
            raise ValidationError("rhs block touches qubits outside the state register")
    return qasm.Circuit(a_block.n_qubits, list(b_block.instructions) + list(a_block.instructions))


def assemble_plan(plan):
    if plan.b_block is None:
        raise ValidationError("plan has no rhs block")
    if plan.b_block.n_qubits != plan.n_state:
        raise ValidationError(f"rhs block has {plan.b_block.n_qubits} qubits, state register has {plan.n_state}")
    return assemble(plan.a_block, plan.b_block)


def solution_from_amplitudes(psi, p_success, plan, norm_b):
    """``x = psi * sqrt(p) / C * ||b|| * scale``, un-embedded to the original system."""
    x = np.asarray(psi, dtype=np.complex128) * (math.sqrt(p_success) / plan.C) * norm_b * plan.scale
    if plan.system is not None:
        x = plan.system.unembed(x)
    return x


def recover_solution(final_state, plan, norm_b):
    """Postselect ancilla = 1, clock = 0 on ``final_state`` and rescale the state register."""
    mask, value = plan.postselect_spec().mask_value()
    state, p = postselect_mask(final_state.copy(), mask, value)
    psi = state.amplitudes[plan.solution_indices()]
    return solution_from_amplitudes(psi, p, plan, norm_b)


# Solving -----------------------------------------------------------------

@dataclass
class SolveDiagnostics:
    phases: dict
    p_success: float
    total: float
    n_qubits: int
    n_amplitudes: int
    a_block_reused: bool = False

    def to_json(self):
        return {
            "phases": dict(self.phases),
            "p_success": self.p_success,
            "total": self.total,
            "n_qubits": self.n_qubits,
            "n_amplitudes": self.n_amplitudes,
            "a_block_reused": self.a_block_reused,
        }


def _run_plan(plan, executor, readout):
    """Execute an assembled plan. Returns ``(x, timings, p, n_amplitudes)``."""
    circuit = assemble_plan(plan)
    if readout == "solution":
        indices = plan.solution_indices()
    elif readout == "full":
        indices = []
    else:
        raise ValidationError(f"readout must be 'solution' or 'full', got {readout!r}")
    t0 = time.perf_counter()
    result = executor.execute(circuit, indices, plan.postselect_spec())
    roundtrip = time.perf_counter() - t0
    t1 = time.perf_counter()
    amps = np.asarray(result.amplitudes)
    n_amps = amps.shape[0]
    psi = amps if readout == "solution" else amps[plan.solution_indices()]
    x = solution_from_amplitudes(psi, result.p_success, plan, plan.norm_b)
    client_extract = time.perf_counter() - t1
    timings = {
        "transfer": max(0.0, roundtrip - result.sim_time - result.extract_time),
        "simulation": result.sim_time,
        "extraction": result.extract_time + client_extract,
    }
    return x, timings, result.p_success, n_amps


def hhl_solve(
    system,
    m_clock=DEFAULT_M_CLOCK,
    executor=None,
    readout="solution",
    t=None,
    scale=None,
    evolution="exact",
    trotter_steps=1,
    eigen_filter=True,
):
    """Solve a prepared system end to end; returns ``(x, SolveDiagnostics)``."""
    executor = LocalExecutor() if executor is None else executor
    start = time.perf_counter()
    plan = build_plan(system, m_clock, t, scale, evolution, trotter_steps, eigen_filter)
    plan = plan.with_rhs(synth_rhs_block(system.rhs))
    synthesis = time.perf_counter() - start
    x, timings, p, n_amps = _run_plan(plan, executor, readout)
    total = time.perf_counter() - start
    phases = {"synthesis": synthesis, **timings}
    return x, SolveDiagnostics(phases, p, total, plan.n_qubits, n_amps)


class HhlSolver:
    """Callable ``solver(A, b) -> x`` that synthesizes the matrix block once per distinct ``A``.

    Diagnostics of every call are appended to ``self.diagnostics``.
    """

    def __init__(
        self,
        m_clock=DEFAULT_M_CLOCK,
        executor=None,
        readout="solution",
        t=None,
        scale=None,
        evolution="exact",
        trotter_steps=1,
        eigen_filter=True,
    ):
        _check_m_clock(m_clock)
        self.m_clock = m_clock
        self.executor = LocalExecutor() if executor is None else executor
        self.readout = readout
        self.plan_options = dict(t=t, scale=scale, evolution=evolution, trotter_steps=trotter_steps, eigen_filter=eigen_filter)
        self.diagnostics = []
        self._key = None
        self._plan = None

    @property
    def plan(self):
        return self._plan

    @property
    def last_diagnostics(self):
        return self.diagnostics[-1] if self.diagnostics else None

    def __call__(self, a, b):
        start = time.perf_counter()
        a = np.asarray(a)
        key = (a.shape, a.dtype.str, a.tobytes())
        reused = key == self._key
        if reused:
            system = self._plan.system.with_rhs(b)
            plan = replace(self._plan, system=system)
        else:
            system = prepare_system(a, b)
            plan = build_plan(system, self.m_clock, **self.plan_options)
            self._key, self._plan = key, plan
        plan = plan.with_rhs(synth_rhs_block(system.rhs))
        synthesis = time.perf_counter() - start
        x, timings, p, n_amps = _run_plan(plan, self.executor, self.readout)
        total = time.perf_counter() - start
        self.diagnostics.append(
            SolveDiagnostics({"synthesis": synthesis, **timings}, p, total, plan.n_qubits, n_amps, reused)
        )
        return x
