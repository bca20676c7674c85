"""Minimal Modbus/TCP request builder and stub controller.

The stub stands in for the protected controller endpoint: it answers
the eight benchmark function codes over an in-memory coil/register map
and returns exception code 0x01 for anything else.  It also counts the
requests it receives, which the flood experiment uses to measure how
many attack messages slipped past the relay.
"""

from __future__ import annotations

import socket
import struct
import threading

FC_READ_COILS = 1
FC_READ_DISCRETE = 2
FC_READ_HOLDING = 3
FC_READ_INPUT = 4
FC_WRITE_COIL = 5
FC_WRITE_REGISTER = 6
FC_WRITE_COILS = 15
FC_WRITE_REGISTERS = 16

BENCH_FUNCTIONS = [
    (FC_READ_COILS, "Read Coil"),
    (FC_READ_DISCRETE, "Read Discrete Input"),
    (FC_READ_HOLDING, "Read Holding Register"),
    (FC_READ_INPUT, "Read Input Register"),
    (FC_WRITE_COIL, "Write Single Coil"),
    (FC_WRITE_REGISTER, "Write Single Holding Register"),
    (FC_WRITE_COILS, "Write Multiple Coils"),
    (FC_WRITE_REGISTERS, "Write Multiple Holding Registers"),
]

EXCEPTION_ILLEGAL_FUNCTION = 0x01


def mbap(tid: int, pdu: bytes, unit: int = 1) -> bytes:
    return struct.pack(">HHHB", tid & 0xFFFF, 0, len(pdu) + 1, unit) + pdu


def build_request(fc: int, tid: int = 0, address: int = 0, quantity: int = 4,
                  value: int = 0, payload_pad: int = 0) -> bytes:
    """A protocol-correct request frame for the supported function codes.

    payload_pad appends extra register data to the multi-write requests,
    which the flood generator uses to reach a target message size.
    """
    if fc in (FC_READ_COILS, FC_READ_DISCRETE, FC_READ_HOLDING, FC_READ_INPUT):
        pdu = struct.pack(">BHH", fc, address, quantity)
    elif fc == FC_WRITE_COIL:
        pdu = struct.pack(">BHH", fc, address, 0xFF00 if value else 0x0000)
    elif fc == FC_WRITE_REGISTER:
        pdu = struct.pack(">BHH", fc, address, value & 0xFFFF)
    elif fc == FC_WRITE_COILS:
        nbytes = (quantity + 7) // 8
        data = bytes((value >> (8 * i)) & 0xFF for i in range(nbytes))
        pdu = struct.pack(">BHHB", fc, address, quantity, nbytes) + data
    elif fc == FC_WRITE_REGISTERS:
        nregs = quantity + payload_pad // 2
        data = struct.pack(f">{nregs}H", *([value & 0xFFFF] * nregs))
        pdu = struct.pack(">BHHB", fc, address, nregs, len(data)) + data
    else:
        raise ValueError(f"unsupported function code {fc}")
    return mbap(tid, pdu)


class StubController:
    """In-memory Modbus/TCP responder on a local port."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.host = host
        self.port = port
        self.coils: dict[int, int] = {}
        self.registers: dict[int, int] = {}
        self.request_count = 0
        self._lock = threading.Lock()
        self._listener: socket.socket | None = None
        self._shutdown = threading.Event()
        self._threads: list[threading.Thread] = []

    def start(self):
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.host, self.port))
        self.port = self._listener.getsockname()[1]
        self._listener.listen(128)
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self):
        while not self._shutdown.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve(self, conn: socket.socket):
        buf = bytearray()
        try:
            while not self._shutdown.is_set():
                data = conn.recv(65536)
                if not data:
                    break
                buf.extend(data)
                while len(buf) >= 7:
                    length = int.from_bytes(buf[4:6], "big")
                    total = 6 + length
                    if length == 0:
                        return
                    if len(buf) < total:
                        break
                    frame = bytes(buf[:total])
                    del buf[:total]
                    with self._lock:
                        self.request_count += 1
                    conn.sendall(self._respond(frame))
        except OSError:
            pass
        finally:
            conn.close()

    def _respond(self, frame: bytes) -> bytes:
        tid = int.from_bytes(frame[0:2], "big")
        unit = frame[6]
        pdu = frame[7:]
        fc = pdu[0] if pdu else 0
        try:
            body = self._handle(fc, pdu)
        except Exception:
            body = struct.pack(">BB", fc | 0x80, EXCEPTION_ILLEGAL_FUNCTION)
        return struct.pack(">HHHB", tid, 0, len(body) + 1, unit) + body

    def _handle(self, fc: int, pdu: bytes) -> bytes:
        if fc in (FC_READ_COILS, FC_READ_DISCRETE):
            address, quantity = struct.unpack(">HH", pdu[1:5])
            nbytes = (quantity + 7) // 8
            bits = bytearray(nbytes)
            table = self.coils
            for i in range(quantity):
                if table.get(address + i):
                    bits[i // 8] |= 1 << (i % 8)
            return struct.pack(">BB", fc, nbytes) + bytes(bits)
        if fc in (FC_READ_HOLDING, FC_READ_INPUT):
            address, quantity = struct.unpack(">HH", pdu[1:5])
            vals = [self.registers.get(address + i, 0) for i in range(quantity)]
            return struct.pack(f">BB{quantity}H", fc, 2 * quantity, *vals)
        if fc == FC_WRITE_COIL:
            address, value = struct.unpack(">HH", pdu[1:5])
            self.coils[address] = 1 if value == 0xFF00 else 0
            return pdu[:5]
        if fc == FC_WRITE_REGISTER:
            address, value = struct.unpack(">HH", pdu[1:5])
            self.registers[address] = value
            return pdu[:5]
        if fc == FC_WRITE_COILS:
            address, quantity, nbytes = struct.unpack(">HHB", pdu[1:6])
            data = pdu[6:6 + nbytes]
            for i in range(quantity):
                bit = (data[i // 8] >> (i % 8)) & 1 if i // 8 < len(data) else 0
                self.coils[address + i] = bit
            return struct.pack(">BHH", fc, address, quantity)
        if fc == FC_WRITE_REGISTERS:
            address, quantity, nbytes = struct.unpack(">HHB", pdu[1:6])
            data = pdu[6:6 + nbytes]
            for i in range(min(quantity, len(data) // 2)):
                self.registers[address + i] = int.from_bytes(
                    data[2 * i:2 * i + 2], "big")
            return struct.pack(">BHH", fc, address, quantity)
        raise ValueError(f"unsupported function code {fc}")

    def stop(self):
        self._shutdown.set()
        if self._listener:
            try:
                self._listener.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2)
