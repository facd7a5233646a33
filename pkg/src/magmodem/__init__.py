"""Software modem for a CPU-load driven magnetic covert channel.

A transmitter turns bits into busy/idle CPU load schedules, the channel
model turns the resulting power waveform into magnetometer samples, and a
streaming receiver recovers framed 32-bit payloads from those samples.
"""
from .channel import ChannelConfig, FieldSampleStream, SensorConfig, channel_preset, synthesize
from .framing import Frame, CrcMismatch, build_frame, parse_frame
from .modulation import FskParams, LoadSchedule, OokParams, schedule_bits
from .receiver import EventKind, Receiver, ReceiverConfig, ReceiverEvent, decode
from .transmitter import TxConfig, TxReport, run_hardware_tx, run_simulated_tx

__version__ = "0.1.0"

__all__ = [
    "ChannelConfig", "FieldSampleStream", "SensorConfig", "channel_preset", "synthesize",
    "Frame", "CrcMismatch", "build_frame", "parse_frame",
    "FskParams", "LoadSchedule", "OokParams", "schedule_bits",
    "EventKind", "Receiver", "ReceiverConfig", "ReceiverEvent", "decode",
    "TxConfig", "TxReport", "run_hardware_tx", "run_simulated_tx",
]
