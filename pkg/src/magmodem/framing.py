"""40-bit frames: 4-bit '1010' preamble, 32-bit payload, 4-bit CRC.

Bit order is MSB-first everywhere: within each octet of a message and
within the 32-bit payload word. Bits are plain ``int`` 0/1 values held in
tuples.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

PREAMBLE: tuple[int, ...] = (1, 0, 1, 0)
PAYLOAD_BITS = 32
CRC_BITS = 4
FRAME_BITS = len(PREAMBLE) + PAYLOAD_BITS + CRC_BITS  # 40

# CRC-4-ITU: x^4 + x + 1, init 0, no reflection, no final xor
CRC4_POLY = 0x3

Bits = tuple[int, ...]


class CrcMismatch(Exception):
    """Received CRC does not match the CRC recomputed over the payload."""

    def __init__(self, payload: Bits, received: Bits, computed: Bits):
        self.payload = payload
        self.received = received
        self.computed = computed
        super().__init__(
            f"crc mismatch: received {bits_to_str(received)}, "
            f"computed {bits_to_str(computed)}"
        )


class IncompleteMessage(Exception):
    pass


def _as_bits(bits: Iterable[int], length: int, what: str) -> Bits:
    out = tuple(int(b) for b in bits)
    if len(out) != length:
        raise ValueError(f"{what} must be exactly {length} bits, got {len(out)}")
    if any(b not in (0, 1) for b in out):
        raise ValueError(f"{what} must contain only 0/1 values")
    return out


def int_to_bits(value: int, width: int = PAYLOAD_BITS) -> Bits:
    if not 0 <= value < (1 << width):
        raise ValueError(f"value {value} does not fit in {width} bits")
    return tuple((value >> (width - 1 - i)) & 1 for i in range(width))


def bits_to_int(bits: Sequence[int]) -> int:
    value = 0
    for b in bits:
        value = (value << 1) | (int(b) & 1)
    return value


def bits_to_str(bits: Iterable[int]) -> str:
    return "".join("1" if b else "0" for b in bits)


def str_to_bits(text: str) -> Bits:
    text = text.strip()
    if any(c not in "01" for c in text):
        raise ValueError(f"not a bit string: {text!r}")
    return tuple(int(c) for c in text)


def crc4(payload: Sequence[int]) -> Bits:
    """CRC-4 of a 32-bit payload, as 4 bits MSB-first."""
    payload = _as_bits(payload, PAYLOAD_BITS, "payload")
    reg = 0
    for b in payload:
        feedback = ((reg >> 3) & 1) ^ b
        reg = (reg << 1) & 0xF
        if feedback:
            reg ^= CRC4_POLY
    return int_to_bits(reg, CRC_BITS)


@dataclass(frozen=True)
class Frame:
    payload: Bits
    crc: Bits
    preamble: Bits = PREAMBLE

    @property
    def bits(self) -> Bits:
        return self.preamble + self.payload + self.crc

    def __str__(self) -> str:
        return bits_to_str(self.bits)

    @property
    def payload_int(self) -> int:
        return bits_to_int(self.payload)


def build_frame(payload: Sequence[int] | int) -> Frame:
    if isinstance(payload, int):
        payload = int_to_bits(payload)
    payload = _as_bits(payload, PAYLOAD_BITS, "payload")
    return Frame(payload=payload, crc=crc4(payload))


def parse_frame(bits: Sequence[int] | str) -> Bits:
    """Return the payload of a 40-bit frame, raising CrcMismatch on corruption.

    The preamble field is not checked; the receiver has already used it for
    synchronisation by the time a frame is parsed.
    """
    if isinstance(bits, str):
        bits = str_to_bits(bits)
    bits = _as_bits(bits, FRAME_BITS, "frame")
    return check_payload(bits[len(PREAMBLE):])


def check_payload(payload_crc: Sequence[int]) -> Bits:
    """Verify the 36 post-preamble bits (payload followed by crc)."""
    payload_crc = _as_bits(payload_crc, PAYLOAD_BITS + CRC_BITS, "payload+crc")
    payload = payload_crc[:PAYLOAD_BITS]
    received = payload_crc[PAYLOAD_BITS:]
    computed = crc4(payload)
    if received != computed:
        raise CrcMismatch(payload, received, computed)
    return payload


def chunk_message(message: bytes) -> list[Bits]:
    """Split a message into payloads, led by a 32-bit bit-length header."""
    if not message:
        raise ValueError("message must be non-empty")
    n_bits = len(message) * 8
    if n_bits >= 1 << PAYLOAD_BITS:
        raise ValueError("message too long for a 32-bit length header")
    stream = [int(b) for byte in message for b in int_to_bits(byte, 8)]
    pad = (-len(stream)) % PAYLOAD_BITS
    stream.extend([0] * pad)
    payloads = [int_to_bits(n_bits)]
    payloads.extend(
        tuple(stream[i:i + PAYLOAD_BITS]) for i in range(0, len(stream), PAYLOAD_BITS)
    )
    return payloads


def reassemble(payloads: Sequence[Sequence[int]]) -> bytes:
    if not payloads:
        raise IncompleteMessage("no payloads")
    header = _as_bits(payloads[0], PAYLOAD_BITS, "length header")
    n_bits = bits_to_int(header)
    if n_bits == 0 or n_bits % 8:
        raise IncompleteMessage(f"invalid length header: {n_bits} bits")
    needed = -(-n_bits // PAYLOAD_BITS)
    body = payloads[1:]
    if len(body) < needed:
        raise IncompleteMessage(f"need {needed} payloads after header, got {len(body)}")
    stream = [b for p in body[:needed] for b in _as_bits(p, PAYLOAD_BITS, "payload")]
    stream = stream[:n_bits]
    return bytes(bits_to_int(stream[i:i + 8]) for i in range(0, n_bits, 8))


def frame_count(message: bytes) -> int:
    """Number of data payloads (excluding the length header)."""
    return -(-len(message) * 8 // PAYLOAD_BITS)
