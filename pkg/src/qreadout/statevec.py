"""Statevector simulation for the readout circuits.

Qubit ``q`` is bit ``q`` of the basis index (qubit 0 is the least significant).
A register is a contiguous run of qubits; its integer value is read with the
lowest qubit as the least significant bit.

Circuits are lists of operations.  Each operation can run on two backends:

* ``"gate"``: decomposed into elementary one-qubit gates with arbitrary
  (open or closed) controls.  Slow, used as the correctness oracle.
* ``"fast"``: closed forms (FFT for the QFT, index rolls for adders,
  Householder reflections for state preparation).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_QUBIT_CAP = 24


class PostSelectionError(RuntimeError):
    """Raised when a post-selected branch has zero probability."""


def rng_for(seed: int | None, *stream: int) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by a seed and a stream path."""
    entropy = [0 if seed is None else int(seed)] + [int(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


# ---------------------------------------------------------------------------
# layout and state


@dataclass(frozen=True)
class RegisterLayout:
    """Per-dimension registers (dimension 1 lowest) followed by ancillas."""

    dims: tuple[int, ...]
    ancillas: int = 0
    cap: int = DEFAULT_QUBIT_CAP

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        if any(n < 1 for n in self.dims):
            raise ValueError("every register needs at least one qubit")
        if self.ancillas < 0:
            raise ValueError("negative ancilla count")
        if self.n_total > self.cap:
            raise ValueError(f"{self.n_total} qubits exceed the cap of {self.cap}")

    @property
    def n_total(self) -> int:
        return sum(self.dims) + self.ancillas

    @property
    def n_data(self) -> int:
        return sum(self.dims)

    def register(self, ell: int) -> tuple[int, ...]:
        start = sum(self.dims[:ell])
        return tuple(range(start, start + self.dims[ell]))

    def data_qubits(self) -> tuple[int, ...]:
        return tuple(range(self.n_data))

    def ancilla(self, i: int) -> int:
        if not 0 <= i < self.ancillas:
            raise IndexError("ancilla index out of range")
        return self.n_data + i


class StateVector:
    """Complex amplitudes over ``n`` qubits, possibly sub-normalized."""

    __slots__ = ("amplitudes",)

    def __init__(self, amplitudes, copy: bool = True):
        a = np.array(amplitudes, dtype=complex, copy=copy).reshape(-1)
        size = a.size
        if size < 1 or size & (size - 1):
            raise ValueError("amplitude count must be a power of two")
        nrm = float(np.vdot(a, a).real)
        if nrm > 1.0 + 1e-9:
            raise ValueError(f"squared norm {nrm} exceeds 1")
        self.amplitudes = a

    @classmethod
    def zero(cls, n: int) -> "StateVector":
        return cls.basis(n, 0)

    @classmethod
    def basis(cls, n: int, index: int) -> "StateVector":
        a = np.zeros(1 << n, dtype=complex)
        a[index] = 1.0
        return cls(a, copy=False)

    @property
    def n_qubits(self) -> int:
        return self.amplitudes.size.bit_length() - 1

    @property
    def norm_sq(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes)

    def __repr__(self):
        return f"StateVector(n={self.n_qubits}, norm_sq={self.norm_sq:.6g})"


# ---------------------------------------------------------------------------
# elementary gates


@dataclass(frozen=True)
class Gate:
    """One-qubit gate descriptor: h, x, z, ry(theta) or p(phi)."""

    name: str
    param: float = 0.0

    def matrix(self) -> np.ndarray:
        t = self.param
        if self.name == "h":
            return np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
        if self.name == "x":
            return np.array([[0, 1], [1, 0]], dtype=complex)
        if self.name == "z":
            return np.array([[1, 0], [0, -1]], dtype=complex)
        if self.name == "ry":
            c, s = np.cos(t / 2), np.sin(t / 2)
            return np.array([[c, -s], [s, c]], dtype=complex)
        if self.name == "p":
            return np.array([[1, 0], [0, np.exp(1j * t)]], dtype=complex)
        raise ValueError(f"unknown gate {self.name!r}")

    def adjoint(self) -> "Gate":
        if self.name in ("h", "x", "z"):
            return self
        return Gate(self.name, -self.param)


H, X, Z = Gate("h"), Gate("x"), Gate("z")


def Ry(theta: float) -> Gate:
    return Gate("ry", float(theta))


def P(phi: float) -> Gate:
    return Gate("p", float(phi))


def _control_mask(n: int, controls: Sequence[int], values: Sequence[int]) -> np.ndarray | None:
    if not controls:
        return None
    idx = np.arange(1 << n)
    mask = np.ones(1 << n, dtype=bool)
    for q, v in zip(controls, values):
        mask &= ((idx >> q) & 1) == v
    return mask


def _check_qubits(n: int, targets: Sequence[int], controls: Sequence[int]):
    allq = list(targets) + list(controls)
    for q in allq:
        if not 0 <= q < n:
            raise IndexError(f"qubit {q} out of range for {n} qubits")
    if len(set(allq)) != len(allq):
        raise ValueError("targets and controls must be distinct")


def _apply_1q(a: np.ndarray, n: int, u: np.ndarray, t: int, mask: np.ndarray | None):
    v = a.reshape(-1, 2, 1 << t)
    a0 = v[:, 0, :].copy()
    a1 = v[:, 1, :].copy()
    n0 = u[0, 0] * a0 + u[0, 1] * a1
    n1 = u[1, 0] * a0 + u[1, 1] * a1
    if mask is not None:
        m = mask.reshape(-1, 2, 1 << t)[:, 0, :]
        n0 = np.where(m, n0, a0)
        n1 = np.where(m, n1, a1)
    v[:, 0, :] = n0
    v[:, 1, :] = n1


# ---------------------------------------------------------------------------
# operations


@dataclass(frozen=True)
class Op:
    """Base operation with optional controls (``ctrl_state`` 1 = closed)."""

    controls: tuple[int, ...] = field(default=(), kw_only=True)
    ctrl_state: tuple[int, ...] | None = field(default=None, kw_only=True)

    def cvals(self) -> tuple[int, ...]:
        return self.ctrl_state if self.ctrl_state is not None else (1,) * len(self.controls)

    def with_controls(self, controls: Sequence[int], values: Sequence[int]) -> "Op":
        return dataclasses.replace(
            self,
            controls=tuple(controls) + self.controls,
            ctrl_state=tuple(values) + self.cvals(),
        )

    def qubits(self) -> tuple[int, ...]:
        raise NotImplementedError

    def decompose(self) -> list["Op"]:
        raise NotImplementedError

    def fast(self, a: np.ndarray, n: int) -> None:
        for op in self.decompose():
            op.fast(a, n)

    def adjoint(self) -> "Op":
        raise NotImplementedError

    def _mask(self, n):
        return _control_mask(n, self.controls, self.cvals())


@dataclass(frozen=True)
class GateOp(Op):
    gate: Gate = H
    target: int = 0

    def qubits(self):
        return (self.target,)

    def decompose(self):
        return [self]

    def fast(self, a, n):
        _apply_1q(a, n, self.gate.matrix(), self.target, self._mask(n))

    def adjoint(self):
        return GateOp(self.gate.adjoint(), self.target, controls=self.controls, ctrl_state=self.ctrl_state)


@dataclass(frozen=True)
class GlobalPhase(Op):
    phi: float = np.pi

    def qubits(self):
        return ()

    def decompose(self):
        return [self]

    def fast(self, a, n):
        m = self._mask(n)
        ph = np.exp(1j * self.phi)
        if m is None:
            a *= ph
        else:
            a[m] *= ph

    def adjoint(self):
        return GlobalPhase(-self.phi, controls=self.controls, ctrl_state=self.ctrl_state)


@dataclass(frozen=True)
class Swap(Op):
    a: int = 0
    b: int = 1

    def qubits(self):
        return (self.a, self.b)

    def decompose(self):
        c, v = self.controls, self.cvals()
        return [
            GateOp(X, self.b, controls=(self.a,) + c, ctrl_state=(1,) + v),
            GateOp(X, self.a, controls=(self.b,) + c, ctrl_state=(1,) + v),
            GateOp(X, self.b, controls=(self.a,) + c, ctrl_state=(1,) + v),
        ]

    def adjoint(self):
        return self


def _slice_view(a: np.ndarray, qubits: Sequence[int]) -> tuple[int, int, int]:
    q = list(qubits)
    if q != list(range(q[0], q[0] + len(q))):
        raise ValueError("register slice must be contiguous and ascending")
    return q[0], len(q), a.size >> (q[0] + len(q))


def _on_qubits(a: np.ndarray, n: int, qubits: Sequence[int], fn) -> np.ndarray:
    """Apply ``fn`` to a view of shape (rest, 2**m, 1) where axis 1 holds the
    integer value of ``qubits`` (qubits[0] least significant); returns a new array."""
    q = list(qubits)
    m = len(q)
    if q == list(range(q[0], q[0] + m)):
        hi = a.size >> (q[0] + m)
        v = a.reshape(hi, 1 << m, 1 << q[0])
        return fn(v).reshape(-1)
    t = a.reshape((2,) * n)
    sel = [n - 1 - x for x in reversed(q)]
    rest = [ax for ax in range(n) if ax not in sel]
    perm = rest + sel
    v = np.transpose(t, perm).reshape(-1, 1 << m, 1)
    out = fn(v).reshape((2,) * n)
    return np.transpose(out, np.argsort(perm)).reshape(-1)


def _blend(a: np.ndarray, new: np.ndarray, mask: np.ndarray | None):
    if mask is None:
        a[:] = new
    else:
        a[mask] = new[mask]


@dataclass(frozen=True)
class QFT(Op):
    """|j> -> N^{-1/2} sum_k exp(2 pi i jk/N)|k> on a register (adjoint if inverse)."""

    register: tuple[int, ...] = ()
    inverse: bool = False

    def qubits(self):
        return self.register

    def decompose(self):
        q = list(self.register)
        m = len(q)
        ops: list[Op] = []
        for i in range(m - 1, -1, -1):
            ops.append(GateOp(H, q[i]))
            for j in range(i - 1, -1, -1):
                ops.append(GateOp(P(np.pi / 2 ** (i - j)), q[i], controls=(q[j],)))
        for i in range(m // 2):
            ops.append(Swap(q[i], q[m - 1 - i]))
        if self.inverse:
            ops = [op.adjoint() for op in reversed(ops)]
        return [op.with_controls(self.controls, self.cvals()) for op in ops]

    def fast(self, a, n):
        s, m, hi = _slice_view(a, self.register)
        v = a.reshape(hi, 1 << m, 1 << s)
        if self.inverse:
            new = np.fft.fft(v, axis=1, norm="ortho")
        else:
            new = np.fft.ifft(v, axis=1, norm="ortho")
        _blend(a, new.reshape(-1), self._mask(n))

    def adjoint(self):
        return QFT(self.register, not self.inverse, controls=self.controls, ctrl_state=self.ctrl_state)


@dataclass(frozen=True)
class Increment(Op):
    """|k> -> |k+1 mod N> on a register (decrement if inverse)."""

    register: tuple[int, ...] = ()
    inverse: bool = False

    def qubits(self):
        return self.register

    def decompose(self):
        q = list(self.register)
        ops: list[Op] = [
            GateOp(X, q[i], controls=tuple(q[:i]), ctrl_state=(1,) * i) for i in range(len(q) - 1, -1, -1)
        ]
        if self.inverse:
            ops = ops[::-1]
        return [op.with_controls(self.controls, self.cvals()) for op in ops]

    def fast(self, a, n):
        s, m, hi = _slice_view(a, self.register)
        v = a.reshape(hi, 1 << m, 1 << s)
        new = np.roll(v, -1 if self.inverse else 1, axis=1)
        _blend(a, new.reshape(-1), self._mask(n))

    def adjoint(self):
        return Increment(self.register, not self.inverse, controls=self.controls, ctrl_state=self.ctrl_state)


@dataclass(frozen=True)
class ModularAdd(Op):
    """|k> -> |k + j mod N> (or k - j if inverse) for a classical constant j."""

    register: tuple[int, ...] = ()
    constant: int = 0
    inverse: bool = False

    def __post_init__(self):
        if not 0 <= self.constant < (1 << len(self.register)):
            raise ValueError("adder constant out of range")

    def qubits(self):
        return self.register

    def decompose(self):
        q = list(self.register)
        ops: list[Op] = []
        for i in range(len(q)):
            if (self.constant >> i) & 1:
                ops.extend(Increment(tuple(q[i:])).decompose())
        if self.inverse:
            ops = [op.adjoint() for op in reversed(ops)]
        return [op.with_controls(self.controls, self.cvals()) for op in ops]

    def fast(self, a, n):
        s, m, hi = _slice_view(a, self.register)
        v = a.reshape(hi, 1 << m, 1 << s)
        shift = -self.constant if self.inverse else self.constant
        _blend(a, np.roll(v, shift, axis=1).reshape(-1), self._mask(n))

    def adjoint(self):
        return ModularAdd(self.register, self.constant, not self.inverse, controls=self.controls, ctrl_state=self.ctrl_state)


@dataclass(frozen=True, eq=False)
class StatePrep(Op):
    """Householder unitary U with U|0> = |psi> on a register.

    Treated as an oracle: both backends apply the same reflection.
    """

    register: tuple[int, ...] = ()
    psi: np.ndarray = field(default_factory=lambda: np.ones(1))
    inverse: bool = False

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=complex).reshape(-1)
        if psi.size != 1 << len(self.register):
            raise ValueError("state size does not match register")
        if abs(np.vdot(psi, psi).real - 1.0) > 1e-10:
            raise ValueError("state preparation needs a unit vector")
        object.__setattr__(self, "psi", psi)

    def qubits(self):
        return self.register

    def decompose(self):
        return [self]

    def _apply(self, v: np.ndarray) -> np.ndarray:
        psi = self.psi
        r = abs(psi[0])
        phase = psi[0] / r if r > 0 else 1.0
        w = psi / phase
        u = -w.copy()
        u[0] += 1.0
        uu = float(np.vdot(u, u).real)
        if self.inverse:
            v = v * np.conj(phase)
        if uu > 1e-30:
            proj = np.tensordot(u.conj(), v, axes=([0], [1]))
            v = v - (2.0 / uu) * u[None, :, None] * proj[:, None, :]
        if not self.inverse:
            v = v * phase
        return v

    def fast(self, a, n):
        new = _on_qubits(a, n, self.register, self._apply)
        _blend(a, new, self._mask(n))

    def adjoint(self):
        return StatePrep(self.register, self.psi, not self.inverse, controls=self.controls, ctrl_state=self.ctrl_state)


@dataclass(frozen=True)
class EvenExtension(Op):
    """Doubles a register with an ancilla as the new top bit.

    With the ancilla in |0>, psi_j becomes g_J with g_J = psi_J / sqrt2 for
    J < N and g_J = psi_{(2N - J) mod N} / sqrt2 for J >= N.
    """

    register: tuple[int, ...] = ()
    ancilla: int = 0
    inverse: bool = False

    def qubits(self):
        return self.register + (self.ancilla,)

    def decompose(self):
        ops: list[Op] = [GateOp(H, self.ancilla)]
        ops += [GateOp(X, q, controls=(self.ancilla,)) for q in self.register]
        ops.append(Increment(self.register, controls=(self.ancilla,)))
        if self.inverse:
            ops = [op.adjoint() for op in reversed(ops)]
        out = []
        for op in ops:
            out.extend(
                op.with_controls(self.controls, self.cvals()).decompose()
                if isinstance(op, Increment)
                else [op.with_controls(self.controls, self.cvals())]
            )
        return out

    def fast(self, a, n):
        ops = [GateOp(H, self.ancilla)]
        ops += [GateOp(X, q, controls=(self.ancilla,)) for q in self.register]
        ops.append(Increment(self.register, controls=(self.ancilla,)))
        if self.inverse:
            ops = [op.adjoint() for op in reversed(ops)]
        for op in ops:
            op.with_controls(self.controls, self.cvals()).fast(a, n)

    def adjoint(self):
        return EvenExtension(self.register, self.ancilla, not self.inverse, controls=self.controls, ctrl_state=self.ctrl_state)


@dataclass(frozen=True)
class ZeroReflection(Op):
    """S0 = I - 2|0><0| on a set of qubits."""

    register: tuple[int, ...] = ()

    def qubits(self):
        return self.register

    def decompose(self):
        q = list(self.register)
        top, rest = q[0], q[1:]
        ops = [
            GateOp(X, top),
            GateOp(Z, top, controls=tuple(rest), ctrl_state=(0,) * len(rest)),
            GateOp(X, top),
        ]
        return [op.with_controls(self.controls, self.cvals()) for op in ops]

    def fast(self, a, n):
        idx = np.arange(a.size)
        sel = np.ones(a.size, dtype=bool)
        for q in self.register:
            sel &= ((idx >> q) & 1) == 0
        m = self._mask(n)
        if m is not None:
            sel &= m
        a[sel] *= -1

    def adjoint(self):
        return self


class Circuit:
    """Ordered list of operations over ``n`` qubits."""

    def __init__(self, n: int, ops: Iterable[Op] = ()):
        self.n = int(n)
        self.ops: list[Op] = list(ops)

    def append(self, op: Op) -> "Circuit":
        _check_qubits(self.n, op.qubits(), op.controls)
        self.ops.append(op)
        return self

    def extend(self, ops: Iterable[Op]) -> "Circuit":
        for op in ops:
            self.append(op)
        return self

    def inverse(self) -> "Circuit":
        return Circuit(self.n, [op.adjoint() for op in reversed(self.ops)])

    def controlled(self, controls: Sequence[int], values: Sequence[int] | None = None) -> "Circuit":
        values = tuple(values) if values is not None else (1,) * len(controls)
        return Circuit(self.n, [op.with_controls(controls, values) for op in self.ops])

    def elementary(self) -> list[Op]:
        out: list[Op] = []
        stack = list(reversed(self.ops))
        while stack:
            op = stack.pop()
            parts = op.decompose()
            if len(parts) == 1 and parts[0] is op:
                out.append(op)
            else:
                stack.extend(reversed(parts))
        return out

    def run(self, state: StateVector | None = None, backend: str = "fast") -> StateVector:
        st = StateVector.zero(self.n) if state is None else state.copy()
        if st.n_qubits != self.n:
            raise ValueError("state and circuit sizes differ")
        a = st.amplitudes
        if backend == "fast":
            for op in self.ops:
                op.fast(a, self.n)
        elif backend == "gate":
            for op in self.elementary():
                op.fast(a, self.n)
        else:
            raise ValueError(f"unknown backend {backend!r}")
        return st


# ---------------------------------------------------------------------------
# value-semantic helpers


def apply_gate(state: StateVector, gate: Gate, target: int, controls: Sequence[int] = (),
               ctrl_state: Sequence[int] | None = None) -> StateVector:
    n = state.n_qubits
    _check_qubits(n, (target,), controls)
    op = GateOp(gate, target, controls=tuple(controls),
                ctrl_state=None if ctrl_state is None else tuple(ctrl_state))
    return Circuit(n, [op]).run(state)


def qft(state: StateVector, register: Sequence[int], inverse: bool = False, backend: str = "fast") -> StateVector:
    return Circuit(state.n_qubits, [QFT(tuple(register), inverse)]).run(state, backend)


def modular_add(state: StateVector, register: Sequence[int], constant: int, inverse: bool = False,
                backend: str = "fast") -> StateVector:
    return Circuit(state.n_qubits, [ModularAdd(tuple(register), int(constant), inverse)]).run(state, backend)


def incrementer(state: StateVector, register: Sequence[int], controls: Sequence[int] = (),
                backend: str = "fast") -> StateVector:
    op = Increment(tuple(register), controls=tuple(controls))
    return Circuit(state.n_qubits).append(op).run(state, backend)


def even_extension(state: StateVector, register: Sequence[int], ancilla: int, backend: str = "fast") -> StateVector:
    if np.any(np.abs(marginal(state, [ancilla])[1]) > 1e-14):
        raise ValueError("extension ancilla must start in |0>")
    op = EvenExtension(tuple(register), int(ancilla))
    return Circuit(state.n_qubits).append(op).run(state, backend)


# ---------------------------------------------------------------------------
# measurement


@dataclass
class MeasurementHistogram:
    """Outcome counts over a measured qubit subset (outcome bit i = qubits[i])."""

    qubits: tuple[int, ...]
    counts: np.ndarray

    @property
    def shots(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "MeasurementHistogram") -> "MeasurementHistogram":
        if tuple(other.qubits) != tuple(self.qubits):
            raise ValueError("histograms over different qubits")
        return MeasurementHistogram(self.qubits, self.counts + other.counts)

    def frequencies(self) -> np.ndarray:
        return self.counts / max(self.shots, 1)

    def as_dict(self) -> dict[int, int]:
        nz = np.nonzero(self.counts)[0]
        return {int(k): int(self.counts[k]) for k in nz}


def marginal(state: StateVector, qubits: Sequence[int]) -> np.ndarray:
    """Marginal probabilities of the measured subset, outcome bit i = qubits[i]."""
    probs = state.probabilities()
    n = state.n_qubits
    qubits = list(qubits)
    if qubits == list(range(n)):
        return probs
    idx = np.arange(probs.size)
    out = np.zeros(probs.size, dtype=np.int64)
    for i, q in enumerate(qubits):
        out |= ((idx >> q) & 1) << i
    return np.bincount(out, weights=probs, minlength=1 << len(qubits))


def sample_probabilities(p: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial counts for a probability table (renormalized to sum one)."""
    if shots < 1:
        raise ValueError("shots must be at least 1")
    p = np.clip(np.asarray(p, dtype=float).reshape(-1), 0.0, None)
    tot = p.sum()
    if tot <= 0:
        raise ValueError("no probability mass to sample")
    return rng.multinomial(int(shots), p / tot)


def sample(state: StateVector, qubits: Sequence[int] | None, shots: int,
           seed: int | np.random.Generator | None = None) -> MeasurementHistogram:
    if abs(state.norm_sq - 1.0) > 1e-9:
        raise ValueError("sampling needs a normalized state")
    qubits = tuple(range(state.n_qubits)) if qubits is None else tuple(qubits)
    rng = seed if isinstance(seed, np.random.Generator) else rng_for(seed)
    counts = sample_probabilities(marginal(state, qubits), shots, rng)
    return MeasurementHistogram(qubits, counts)


def post_select(state: StateVector, qubits: Sequence[int], outcome: Sequence[int] | int) -> tuple[StateVector, float]:
    """Project ``qubits`` onto ``outcome`` and renormalize; returns (state, probability)."""
    qubits = list(qubits)
    if isinstance(outcome, (int, np.integer)):
        outcome = [(int(outcome) >> i) & 1 for i in range(len(qubits))]
    idx = np.arange(state.amplitudes.size)
    keep = np.ones(idx.size, dtype=bool)
    for q, v in zip(qubits, outcome):
        keep &= ((idx >> q) & 1) == v
    a = np.where(keep, state.amplitudes, 0)
    p = float(np.vdot(a, a).real)
    if p <= 0.0:
        raise PostSelectionError("post-selected outcome has zero probability")
    return StateVector(a / np.sqrt(p), copy=False), p
