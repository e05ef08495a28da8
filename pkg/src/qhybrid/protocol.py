"""Device wire protocol, server and ``qsolve_Axb`` client.

Frames are a 4-byte big-endian length followed by that many bytes of UTF-8
JSON: ``{"type": <TYPE>, "payload": {...}}``. A connection opens with a
HELLO exchange (``protocol_version`` must match), then carries any number of
SOLVE_CIRCUIT -> RESULT | ERROR round trips. ERROR replies keep the
connection open; SHUTDOWN is acknowledged and stops the server.
"""
import json
import logging
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import hhl, qasm
from .device import DeviceResult, PostselectSpec, run_circuit
from .errors import (
    DegeneratePostselectionError,
    DeviceError,
    ExecutionError,
    ProtocolError,
    QasmError,
    ResourceLimitError,
    TransportError,
    ValidationError,
)
from .statevec import DEFAULT_QUBIT_CAP

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MAX_FRAME = 64 * 1024 * 1024
HEADER = struct.Struct(">I")
ERROR_CODES = ("PARSE", "VALIDATE", "EXECUTE", "POSTSELECT", "LIMIT")

_NUMBER = (int, float)
# field -> (accepted types, required)
_SCHEMA = {
    "HELLO": {"protocol_version": (int, True)},
    "SOLVE_CIRCUIT": {
        "qasm_text": (str, True),
        "readout_indices": (list, True),
        "postselect_spec": ((dict, type(None)), False),
    },
    "RESULT": {
        "amplitudes": (list, True),
        "p_success": (_NUMBER, True),
        "device_time": (_NUMBER, True),
        "sim_time": (_NUMBER, False),
        "extract_time": (_NUMBER, False),
    },
    "ERROR": {"code": (str, True), "detail": (str, True)},
    "SHUTDOWN": {},
}
MESSAGE_TYPES = tuple(_SCHEMA)


@dataclass
class Message:
    type: str
    payload: dict = field(default_factory=dict)


def _check_payload(mtype, payload):
    if mtype not in _SCHEMA:
        raise ProtocolError(f"unknown message type {mtype!r}")
    if not isinstance(payload, dict):
        raise ProtocolError(f"{mtype} payload must be an object")
    out = {}
    for name, (types, required) in _SCHEMA[mtype].items():
        if name not in payload:
            if required:
                raise ProtocolError(f"{mtype} payload is missing {name!r}")
            continue
        value = payload[name]
        if not isinstance(value, types) or (isinstance(value, bool) and types is not bool):
            raise ProtocolError(f"{mtype}.{name} has the wrong type")
        out[name] = value
    if mtype == "SOLVE_CIRCUIT":
        if not all(isinstance(i, int) and not isinstance(i, bool) and i >= 0 for i in out["readout_indices"]):
            raise ProtocolError("SOLVE_CIRCUIT.readout_indices must be non-negative integers")
        spec = out.get("postselect_spec")
        if spec is not None:
            try:
                PostselectSpec.from_json(spec)
            except (KeyError, TypeError, ValueError):
                raise ProtocolError("SOLVE_CIRCUIT.postselect_spec is malformed") from None
    elif mtype == "RESULT":
        for pair in out["amplitudes"]:
            if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, _NUMBER) for v in pair)):
                raise ProtocolError("RESULT.amplitudes must be [re, im] pairs")
    elif mtype == "ERROR" and out["code"] not in ERROR_CODES:
        raise ProtocolError(f"unknown error code {out['code']!r}")
    return out


# Message constructors ------------------------------------------------------

def hello(version=PROTOCOL_VERSION):
    return Message("HELLO", {"protocol_version": version})


def solve_circuit(qasm_text, readout_indices=(), postselect=None):
    return Message(
        "SOLVE_CIRCUIT",
        {
            "qasm_text": qasm_text,
            "readout_indices": [int(i) for i in readout_indices],
            "postselect_spec": None if postselect is None else postselect.to_json(),
        },
    )


def result(amplitudes, p_success, device_time, sim_time=None, extract_time=None):
    amps = np.asarray(amplitudes, dtype=np.complex128)
    payload = {
        "amplitudes": [[float(a.real), float(a.imag)] for a in amps],
        "p_success": float(p_success),
        "device_time": float(device_time),
    }
    if sim_time is not None:
        payload["sim_time"] = float(sim_time)
    if extract_time is not None:
        payload["extract_time"] = float(extract_time)
    return Message("RESULT", payload)


def error(code, detail):
    return Message("ERROR", {"code": code, "detail": str(detail)})


def shutdown():
    return Message("SHUTDOWN", {})


def amplitudes_of(msg):
    pairs = msg.payload["amplitudes"]
    if not pairs:
        return np.zeros(0, dtype=np.complex128)
    # a view keeps signed zeros that re + 1j * im would lose
    return np.ascontiguousarray(pairs, dtype=np.float64).view(np.complex128).ravel()


# Framing -------------------------------------------------------------------

def encode_frame(msg, max_size=MAX_FRAME):
    payload = _check_payload(msg.type, msg.payload)
    try:
        body = json.dumps({"type": msg.type, "payload": payload}, separators=(",", ":"), allow_nan=False)
    except ValueError as exc:
        raise ProtocolError(f"cannot encode {msg.type}: {exc}") from None
    data = body.encode("utf-8")
    if len(data) > max_size:
        raise ProtocolError(f"frame body of {len(data)} bytes exceeds limit {max_size}")
    return HEADER.pack(len(data)) + data


def _decode_body(body, base=HEADER.size):
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError("frame body is not UTF-8", offset=base + exc.start) from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed frame body: {exc.msg}", offset=base + len(text[: exc.pos].encode())) from None
    if not isinstance(obj, dict) or not isinstance(obj.get("type"), str):
        raise ProtocolError("frame body must be an object with a string 'type'", offset=base)
    try:
        payload = _check_payload(obj["type"], obj.get("payload", {}))
    except ProtocolError as exc:
        raise ProtocolError(str(exc), offset=base) from None
    return Message(obj["type"], payload)


def _check_length(length, max_size):
    if length == 0:
        raise ProtocolError("frame body is empty", offset=0)
    if length > max_size:
        raise ProtocolError(f"frame length {length} exceeds limit {max_size}", offset=0)


def decode_frame(data, max_size=MAX_FRAME):
    """Decode exactly one frame from ``data``."""
    data = bytes(data)
    if len(data) < HEADER.size:
        raise ProtocolError("truncated frame header", offset=len(data))
    (length,) = HEADER.unpack_from(data)
    _check_length(length, max_size)
    end = HEADER.size + length
    if len(data) < end:
        raise ProtocolError(f"truncated frame: expected {length} body bytes", offset=len(data))
    if len(data) > end:
        raise ProtocolError("trailing bytes after frame", offset=end)
    return _decode_body(data[HEADER.size : end])


def _read_exact(stream, n, consumed):
    buf = stream.read(n)
    if buf is None:
        buf = b""
    if len(buf) < n:
        raise ProtocolError(f"truncated stream: wanted {n} bytes, got {len(buf)}", offset=consumed + len(buf))
    return buf


def read_frame(stream, max_size=MAX_FRAME):
    """Read one frame from a binary file-like object; ``None`` on clean EOF."""
    head = stream.read(HEADER.size)
    if not head:
        return None
    if len(head) < HEADER.size:
        raise ProtocolError("truncated frame header", offset=len(head))
    (length,) = HEADER.unpack(head)
    _check_length(length, max_size)
    return _decode_body(_read_exact(stream, length, HEADER.size))


# Server --------------------------------------------------------------------

def handle_solve(msg, qubit_cap=DEFAULT_QUBIT_CAP, runner=run_circuit):
    """Turn one SOLVE_CIRCUIT into a RESULT or ERROR message."""
    t0 = time.perf_counter()
    p = msg.payload
    try:
        circuit = qasm.parse(p["qasm_text"])
    except QasmError as exc:
        return error("PARSE", exc)
    if circuit.n_qubits > qubit_cap:
        return error("LIMIT", f"circuit needs {circuit.n_qubits} qubits, device cap is {qubit_cap}")
    try:
        spec = PostselectSpec.from_json(p.get("postselect_spec"))
        res = runner(circuit, p["readout_indices"], spec, qubit_cap=qubit_cap)
    except ResourceLimitError as exc:
        return error("LIMIT", exc)
    except DegeneratePostselectionError as exc:
        return error("POSTSELECT", exc)
    except ExecutionError as exc:
        return error("EXECUTE", exc)
    except ValidationError as exc:
        return error("VALIDATE", exc)
    return result(res.amplitudes, res.p_success, time.perf_counter() - t0, res.sim_time, res.extract_time)


class _Handler(socketserver.StreamRequestHandler):
    def _send(self, msg):
        self.wfile.write(encode_frame(msg, self.server.max_frame))
        self.wfile.flush()

    def handle(self):
        srv = self.server
        try:
            first = read_frame(self.rfile, srv.max_frame)
            if first is None:
                return
            if first.type != "HELLO":
                self._send(error("VALIDATE", f"expected HELLO, got {first.type}"))
                return
            if first.payload["protocol_version"] != PROTOCOL_VERSION:
                self._send(
                    error("VALIDATE", f"protocol version {first.payload['protocol_version']} != {PROTOCOL_VERSION}")
                )
                return
            self._send(hello())
            while True:
                try:
                    msg = read_frame(self.rfile, srv.max_frame)
                except ProtocolError as exc:
                    self._send(error("VALIDATE", exc))
                    return
                if msg is None:
                    return
                if msg.type == "SOLVE_CIRCUIT":
                    with srv.device_lock:
                        reply = handle_solve(msg, srv.qubit_cap, srv.runner)
                    srv.report(reply)
                    self._send(reply)
                elif msg.type == "SHUTDOWN":
                    self._send(shutdown())
                    srv.request_shutdown()
                    return
                else:
                    self._send(error("VALIDATE", f"unexpected {msg.type} message"))
        except ProtocolError as exc:
            log.warning("dropping connection from %s: %s", self.client_address, exc)
        except OSError as exc:
            log.info("connection from %s closed: %s", self.client_address, exc)


class DeviceServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    """Accepts many connections; circuits run one at a time, like a single device."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, qubit_cap=DEFAULT_QUBIT_CAP, max_frame=MAX_FRAME, on_request=None, runner=run_circuit):
        super().__init__(address, _Handler)
        self.qubit_cap = qubit_cap
        self.max_frame = max_frame
        self.on_request = on_request
        self.runner = runner
        self.device_lock = threading.Lock()
        self.requests = 0

    @property
    def port(self):
        return self.server_address[1]

    def report(self, reply):
        self.requests += 1
        if self.on_request is not None:
            self.on_request(self.requests, reply)

    def request_shutdown(self):
        threading.Thread(target=self.shutdown, daemon=True).start()


def serve(bind_address, qubit_cap=DEFAULT_QUBIT_CAP, max_frame=MAX_FRAME, on_request=None, ready=None):
    """Run a device server until a client sends SHUTDOWN.

    ``ready`` (optional) is called with the bound server before serving, which
    lets callers learn an ephemeral port.
    """
    with DeviceServer(bind_address, qubit_cap, max_frame, on_request) as server:
        if ready is not None:
            ready(server)
        server.serve_forever(poll_interval=0.05)


def start_background_server(host="127.0.0.1", port=0, **kwargs):
    """Server on a daemon thread; returns ``(server, thread)``."""
    server = DeviceServer((host, port), **kwargs)
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    return server, thread


# Client --------------------------------------------------------------------

def parse_endpoint(text):
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValidationError(f"endpoint must look like host:port, got {text!r}")
    return host, int(port)


class DeviceClient:
    """Blocking connection to a device server (HELLO already exchanged on return)."""

    def __init__(self, host, port, timeout=None, max_frame=MAX_FRAME):
        self.max_frame = max_frame
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from None
        self.stream = self.sock.makefile("rb")
        reply = self.request(hello())
        if reply.type == "ERROR":
            self.close()
            raise DeviceError(reply.payload["code"], reply.payload["detail"])
        if reply.type != "HELLO" or reply.payload["protocol_version"] != PROTOCOL_VERSION:
            self.close()
            raise ProtocolError(f"bad HELLO reply: {reply}")

    def request(self, msg):
        data = encode_frame(msg, self.max_frame)
        try:
            self.sock.sendall(data)
            reply = read_frame(self.stream, self.max_frame)
        except OSError as exc:
            raise TransportError(f"connection lost: {exc}") from None
        if reply is None:
            raise TransportError("device closed the connection")
        return reply

    def solve_circuit(self, qasm_text, readout_indices=(), postselect=None):
        reply = self.request(solve_circuit(qasm_text, readout_indices, postselect))
        if reply.type == "ERROR":
            raise DeviceError(reply.payload["code"], reply.payload["detail"])
        if reply.type != "RESULT":
            raise ProtocolError(f"expected RESULT, got {reply.type}")
        return reply

    def shutdown(self):
        return self.request(shutdown())

    def close(self):
        try:
            self.stream.close()
        finally:
            self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class RemoteExecutor:
    """Executor that ships circuits as qasm-lite text to a device server."""

    name = "remote"

    def __init__(self, client):
        self.client = client

    def execute(self, circuit, readout_indices=(), postselect=None):
        reply = self.client.solve_circuit(qasm.serialize(circuit), readout_indices, postselect)
        p = reply.payload
        sim = p.get("sim_time", p["device_time"])
        ext = p.get("extract_time", 0.0)
        return DeviceResult(amplitudes_of(reply), p["p_success"], sim, ext)


def as_executor(device):
    if device is None:
        return None
    if isinstance(device, DeviceClient):
        return RemoteExecutor(device)
    if hasattr(device, "execute"):
        return device
    raise ValidationError(f"cannot use {device!r} as a device")


def qsolve_Axb(A, b, device=None, m_clock=hhl.DEFAULT_M_CLOCK, readout="solution", return_diagnostics=False, **plan_options):
    """Solve ``A x = b`` on the device.

    ``device`` is a connected :class:`DeviceClient`, any executor, or ``None``
    for the in-process device. The call blocks until the result is back.
    """
    system = hhl.prepare_system(A, b)
    x, diag = hhl.hhl_solve(system, m_clock=m_clock, executor=as_executor(device), readout=readout, **plan_options)
    return (x, diag) if return_diagnostics else x
