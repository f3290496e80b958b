"""Wire boundary between aggregator and plant: newline-delimited JSON
over TCP.

One message per line, UTF-8, LF terminated:

    {"type": "meas"|"cmd"|"err", "seq": <uint>, "t": <seconds>,
     "devices": [{"id": <str>, ...}], ...}

Measurement device entries carry ``temp_c``, ``power_w``, ``state``
("on"/"off"/"locked"), ``lockout_s``.  Command entries carry ``target``
("on"/"off").  The outer field names are a fixed contract so foreign
implementations (a DAQ wrapping real hardware, say) can attach.

The plant owns the clock: it emits a measurement frame, waits up to a
timeout for the matching command, applies whatever arrived through the
feasibility filter, then steps physics.  A missing command never stalls
the plant; the step free-runs and the next frame says so.  Decoding
flags implausible device entries (non-finite temperature, negative
power, unknown state) without dropping the rest of the frame; only
structural damage to a line raises, and that too is recoverable, one
line at a time.
"""
from __future__ import annotations

import json
import math
import socket
import threading
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ProtocolError

MESSAGE_TYPES = ("cmd", "meas", "err")
DEVICE_STATES = ("on", "off", "locked")


@dataclass
class WireMessage:
    type: str
    seq: int
    t: float
    devices: list
    flags: list = dc_field(default_factory=list)
    error: str = ""
    # decode-time annotations (entry index, field name); never serialized
    corrupt: list = dc_field(default_factory=list)

    def payload_equal(self, other: "WireMessage") -> bool:
        return (self.type == other.type and self.seq == other.seq
                and self.t == other.t and self.devices == other.devices
                and self.flags == other.flags and self.error == other.error)


def encode(msg: WireMessage) -> bytes:
    doc = {"type": msg.type, "seq": msg.seq, "t": msg.t,
           "devices": msg.devices}
    if msg.flags:
        doc["flags"] = msg.flags
    if msg.error:
        doc["error"] = msg.error
    return json.dumps(doc, separators=(",", ":"),
                      allow_nan=True).encode() + b"\n"


def _require(cond: bool, why: str):
    if not cond:
        raise ProtocolError(why)


def decode(line) -> WireMessage:
    """Parse one wire line.  Structural damage raises ProtocolError;
    implausible measurement values are flagged per entry instead."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"invalid encoding: {exc}") from None
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid JSON: {exc}") from None
    _require(isinstance(doc, dict), "message must be a JSON object")
    mtype = doc.get("type")
    _require(mtype in MESSAGE_TYPES,
             f"unknown message type {mtype!r}")
    seq = doc.get("seq")
    _require(isinstance(seq, int) and not isinstance(seq, bool)
             and seq >= 0, "seq must be a non-negative integer")
    t = doc.get("t")
    _require(isinstance(t, (int, float)) and not isinstance(t, bool)
             and math.isfinite(t), "t must be a finite number")
    devices = doc.get("devices")
    _require(isinstance(devices, list), "devices must be a list")
    flags = doc.get("flags", [])
    _require(isinstance(flags, list)
             and all(isinstance(f, str) for f in flags),
             "flags must be a list of strings")
    error = doc.get("error", "")
    _require(isinstance(error, str), "error must be a string")
    msg = WireMessage(type=mtype, seq=seq, t=float(t), devices=devices,
                      flags=list(flags), error=error)
    seen = set()
    for i, entry in enumerate(devices):
        _require(isinstance(entry, dict), f"device entry {i} not an object")
        hid = entry.get("id")
        _require(isinstance(hid, str) and hid, f"device entry {i} "
                 "missing string id")
        _require(hid not in seen, f"duplicate device id {hid!r}")
        seen.add(hid)
        if mtype == "meas":
            _flag_meas_entry(msg, i, entry)
        elif mtype == "cmd":
            if entry.get("target") not in ("on", "off"):
                msg.corrupt.append((i, "target"))
    return msg


def _flag_meas_entry(msg: WireMessage, i: int, entry: dict) -> None:
    v = entry.get("temp_c")
    if not (isinstance(v, (int, float)) and not isinstance(v, bool)
            and math.isfinite(v)):
        msg.corrupt.append((i, "temp_c"))
    p = entry.get("power_w")
    if not (isinstance(p, (int, float)) and not isinstance(p, bool)
            and math.isfinite(p) and p >= 0.0):
        msg.corrupt.append((i, "power_w"))
    if entry.get("state") not in DEVICE_STATES:
        msg.corrupt.append((i, "state"))
    k = entry.get("lockout_s")
    if not (isinstance(k, (int, float)) and not isinstance(k, bool)
            and math.isfinite(k) and k >= 0.0):
        msg.corrupt.append((i, "lockout_s"))


def device_state(on: bool, lockout_remaining: float) -> str:
    if on:
        return "on"
    return "locked" if lockout_remaining > 0.0 else "off"


def meas_message(frame, seq: int, missed_command: bool = False
                 ) -> WireMessage:
    """Build a measurement frame from fleet telemetry."""
    devices = []
    for i, hid in enumerate(frame.house_ids):
        devices.append({
            "id": hid,
            "temp_c": round(float(frame.t_measured[i]), 4),
            "power_w": round(float(frame.power_w[i]), 2),
            "state": device_state(bool(frame.on[i]),
                                  float(frame.lockout_remaining[i])),
            "lockout_s": round(float(frame.lockout_remaining[i]), 2),
        })
    flags = ["missed_command"] if missed_command else []
    return WireMessage(type="meas", seq=seq, t=float(frame.t),
                       devices=devices, flags=flags)


def cmd_message(seq: int, t: float, targets: dict) -> WireMessage:
    """``targets`` maps house_id -> "on"/"off"."""
    devices = [{"id": hid, "target": tgt}
               for hid, tgt in targets.items()]
    return WireMessage(type="cmd", seq=seq, t=float(t), devices=devices)


def err_message(seq: int, t: float, why: str) -> WireMessage:
    return WireMessage(type="err", seq=seq, t=float(t), devices=[],
                       error=why)


class _LineReader:
    """Deadline-aware line extraction from a socket; partial data stays
    buffered across timeouts so slow senders are not corrupted."""

    def __init__(self, conn: socket.socket):
        self.conn = conn
        self.buf = bytearray()

    def readline(self, deadline: float):
        while True:
            j = self.buf.find(b"\n")
            if j >= 0:
                line = bytes(self.buf[:j])
                del self.buf[:j + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0.0:
                return None
            self.conn.settimeout(remaining)
            try:
                chunk = self.conn.recv(65536)
            except socket.timeout:
                return None
            if not chunk:
                raise ConnectionError("peer closed")
            self.buf.extend(chunk)


@dataclass
class PlantStats:
    frames_sent: int = 0
    commands_applied: int = 0
    missed_commands: int = 0
    protocol_errors: int = 0
    stale_discarded: int = 0


class PlantServer:
    """TCP server wrapping a fleet; the stepping side of the clock
    contract.  One aggregator connection at a time."""

    def __init__(self, fleet, t_amb: float, dt_control: float = 2.0,
                 timeout: float | None = None, host: str = "127.0.0.1",
                 port: int = 0, max_steps: int | None = None,
                 realtime: bool = False):
        self.fleet = fleet
        self.t_amb = t_amb
        self.dt_control = dt_control
        self.timeout = 2.0 * dt_control if timeout is None else timeout
        self.max_steps = max_steps
        self.realtime = realtime
        self.stats = PlantStats()
        self._listener = socket.create_server((host, port))
        self.address = self._listener.getsockname()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._index = {h: i for i, h in enumerate(fleet.house_ids)}

    def start(self) -> tuple:
        self._thread = threading.Thread(target=self._serve, daemon=True,
                                        name="plant-server")
        self._thread.start()
        return self.address

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=10.0)

    # ------------------------------------------------------- internals

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                self._listener.settimeout(0.2)
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with conn:
                try:
                    self._serve_connection(conn)
                except (ConnectionError, OSError):
                    continue
            if self.max_steps is not None \
                    and self.stats.frames_sent >= self.max_steps:
                return

    def _serve_connection(self, conn: socket.socket) -> None:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        reader = _LineReader(conn)
        last_cmd_seq = -1  # per-connection, per the wire contract
        seq = self.stats.frames_sent
        frame = self.fleet.snapshot(self.t_amb)
        missed = False
        while not self._stop.is_set():
            if self.max_steps is not None \
                    and self.stats.frames_sent >= self.max_steps:
                return
            step_start = time.monotonic()
            conn.sendall(encode(meas_message(frame, seq, missed)))
            self.stats.frames_sent += 1
            cmd, last_cmd_seq = self._await_command(
                conn, reader, seq, last_cmd_seq)
            missed = cmd is None
            if missed:
                self.stats.missed_commands += 1
                targets = None
            else:
                self.stats.commands_applied += 1
                targets = self._targets_from(cmd)
            frame = self.fleet.step(self.t_amb, self.dt_control, targets)
            seq += 1
            if self.realtime:
                budget = self.dt_control - (time.monotonic() - step_start)
                if budget > 0.0:
                    time.sleep(budget)

    def _await_command(self, conn, reader, seq, last_cmd_seq):
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                line = reader.readline(deadline)
            except ConnectionError:
                raise
            if line is None:
                return None, last_cmd_seq
            try:
                msg = decode(line)
            except ProtocolError as exc:
                self.stats.protocol_errors += 1
                conn.sendall(encode(err_message(
                    seq, self.fleet.sim_time, str(exc))))
                continue
            if msg.type != "cmd":
                self.stats.protocol_errors += 1
                conn.sendall(encode(err_message(
                    seq, self.fleet.sim_time,
                    f"expected cmd, got {msg.type}")))
                continue
            if msg.seq <= last_cmd_seq:
                self.stats.stale_discarded += 1
                continue
            return msg, msg.seq

    def _targets_from(self, cmd: WireMessage) -> np.ndarray:
        targets = np.zeros(self.fleet.n, dtype=np.int8)
        corrupt = {i for i, _ in cmd.corrupt}
        for i, entry in enumerate(cmd.devices):
            if i in corrupt:
                continue
            j = self._index.get(entry["id"])
            if j is None:
                continue
            targets[j] = 1 if entry["target"] == "on" else -1
        return targets


@dataclass
class RemoteLog:
    t: list = dc_field(default_factory=list)
    reference: list = dc_field(default_factory=list)
    achieved: list = dc_field(default_factory=list)
    steps: int = 0
    frames_seen: int = 0
    corrupt_entries: int = 0
    missed_flags: int = 0


class AggregatorClient:
    """Reactive aggregator loop against a remote plant.

    Never advances on its own: each control step is triggered by an
    incoming measurement frame, so the step count cannot exceed the
    plant's frame count.  Devices flagged corrupt in a frame keep their
    previous report.
    """

    def __init__(self, host: str, port: int, controller, reference,
                 frame_timeout: float = 30.0):
        self.controller = controller
        self.reference = reference
        self.frame_timeout = frame_timeout
        self.log = RemoteLog()
        self._conn = socket.create_connection((host, port))
        self._conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._reader = _LineReader(self._conn)
        self._seq = 0
        self._last: dict = {}

    def close(self) -> None:
        try:
            self._conn.close()
        except OSError:
            pass

    def run(self, n_steps: int) -> RemoteLog:
        t0 = None
        while self.log.steps < n_steps:
            line = self._reader.readline(time.monotonic()
                                         + self.frame_timeout)
            if line is None:
                raise ProtocolError("plant went silent")
            msg = decode(line)
            if msg.type == "err":
                continue
            if msg.type != "meas":
                raise ProtocolError(f"unexpected {msg.type} from plant")
            self.log.frames_seen += 1
            self.log.corrupt_entries += len(msg.corrupt)
            if "missed_command" in msg.flags:
                self.log.missed_flags += 1
            fb = self._merge(msg)
            if t0 is None:
                t0 = msg.t
            ref = self.reference.value_at(msg.t - t0)
            observed = float(np.sum(fb.power_w))
            batch = self.controller.step(observed, ref, fb, msg.t)
            targets = {hid: ("on" if v > 0 else "off")
                       for hid, v in batch.nonzero()}
            self._conn.sendall(encode(cmd_message(self._seq, msg.t,
                                                  targets)))
            self._seq += 1
            self.log.steps += 1
            self.log.t.append(msg.t)
            self.log.reference.append(ref)
            self.log.achieved.append(observed)
        return self.log

    def _merge(self, msg: WireMessage):
        from .controllers import DeviceFeedback
        corrupt = {}
        for i, fld in msg.corrupt:
            corrupt.setdefault(i, set()).add(fld)
        for i, entry in enumerate(msg.devices):
            hid = entry["id"]
            prev = self._last.get(hid, {"temp_c": 23.0, "power_w": 0.0,
                                        "state": "off", "lockout_s": 0.0})
            bad = corrupt.get(i, ())
            cur = {k: (prev[k] if k in bad else entry.get(k, prev[k]))
                   for k in ("temp_c", "power_w", "state", "lockout_s")}
            self._last[hid] = cur
        ids = tuple(sorted(self._last))
        return DeviceFeedback(
            house_ids=ids,
            t_measured=np.array([self._last[h]["temp_c"] for h in ids]),
            power_w=np.array([self._last[h]["power_w"] for h in ids]),
            on=np.array([self._last[h]["state"] == "on" for h in ids]),
            lockout_remaining=np.array(
                [self._last[h]["lockout_s"]
                 if self._last[h]["state"] == "locked" else 0.0
                 for h in ids]),
            t=msg.t)
