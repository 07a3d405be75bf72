"""Readers for MIT-BIH style WFDB records (.hea / format-212 .dat / .atr).

Only what the MIT-BIH Arrhythmia Database needs is supported: single-segment
records stored in format 212, and MIT-format annotation files.  A small CSV
fallback exists for synthetic fixtures.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SUPPORTED_FORMATS = ("212",)

# Editable AAMI grouping. Anything missing maps to Q (discarded) with a warning.
DEFAULT_AAMI_MAP: dict[str, str] = {
    "N": "N", "L": "N", "R": "N", "e": "N", "j": "N",
    "V": "V", "E": "V",
    "A": "S", "a": "S", "J": "S", "S": "S",
    "F": "F",
    "/": "Q", "f": "Q", "Q": "Q",
}
AAMI_CLASSES = ("N", "V", "S", "F", "Q")

# MIT annotation codes -> mnemonic symbol (subset of the WFDB ecgcodes table).
ANNOTATION_SYMBOLS: dict[int, str] = {
    1: "N", 2: "L", 3: "R", 4: "a", 5: "V", 6: "F", 7: "J", 8: "A", 9: "S",
    10: "E", 11: "j", 12: "/", 13: "Q", 14: "~", 16: "|", 18: "s", 19: "T",
    20: "*", 21: "D", 22: '"', 23: "=", 24: "p", 25: "B", 26: "^", 27: "t",
    28: "+", 29: "u", 30: "?", 31: "!", 32: "[", 33: "]", 34: "e", 35: "n",
    36: "@", 37: "x", 38: "f", 39: "(", 40: ")", 41: "r",
}
SYMBOL_CODES = {sym: code for code, sym in ANNOTATION_SYMBOLS.items()}
BEAT_CODES = frozenset({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 25, 30, 34, 35, 38, 41})

# Pseudo-annotation codes of the MIT format.
_SKIP, _NUM, _SUB, _CHN, _AUX = 59, 60, 61, 62, 63


class WfdbError(ValueError):
    """Raised for malformed or unsupported WFDB input."""


class HeaderParseError(WfdbError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"header line {line_no}: {message}")
        self.line_no = line_no


class UnsupportedFormatError(WfdbError):
    pass


class TruncatedDataError(WfdbError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"byte offset {offset}: {message}")
        self.offset = offset


@dataclass(frozen=True)
class SignalSpec:
    file_name: str
    fmt: str
    gain: float  # ADC units per mV
    baseline: int
    channel_name: str
    adc_zero: int = 0
    init_value: int | None = None


@dataclass(frozen=True)
class RecordHeader:
    record_name: str
    num_signals: int
    sampling_rate: float
    num_samples: int
    signals: tuple[SignalSpec, ...]

    def channel_index(self, name: str) -> int | None:
        for i, spec in enumerate(self.signals):
            if spec.channel_name == name:
                return i
        return None


@dataclass(frozen=True)
class BeatAnnotation:
    sample_index: int
    symbol: str
    aami_class: str

    @property
    def discard(self) -> bool:
        return self.aami_class == "Q"


@dataclass(frozen=True)
class AnnotationEntry:
    """One raw annotation (beat or not) as stored in an MIT annotation file."""

    sample_index: int
    code: int
    symbol: str
    sub: int = 0
    chan: int = 0
    num: int = 0
    aux: bytes = b""


@dataclass(frozen=True)
class Record:
    header: RecordHeader
    signals: tuple[np.ndarray, ...]  # per channel, mV
    annotations: tuple[BeatAnnotation, ...]
    channel: int = 0  # preferred analysis channel
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for sig in self.signals:
            if len(sig) != self.header.num_samples:
                raise WfdbError("signal length does not match header sample count")
            sig.setflags(write=False)
        prev = -1
        for ann in self.annotations:
            if ann.sample_index <= prev:
                raise WfdbError(f"annotation indices not strictly increasing at {ann.sample_index}")
            if ann.sample_index >= self.header.num_samples:
                raise WfdbError(f"annotation at {ann.sample_index} beyond record end")
            prev = ann.sample_index

    @property
    def name(self) -> str:
        return self.header.record_name

    @property
    def fs(self) -> float:
        return self.header.sampling_rate

    @property
    def signal(self) -> np.ndarray:
        return self.signals[self.channel]

    @property
    def q_count(self) -> int:
        return sum(1 for a in self.annotations if a.discard)


# --------------------------------------------------------------------------
# Header
# --------------------------------------------------------------------------

def _parse_number(token: str, line_no: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise HeaderParseError(line_no, f"bad {what}: {token!r}") from None


def parse_header(data: bytes | str) -> RecordHeader:
    """Parse the text of a ``.hea`` file."""
    text = data.decode("ascii", errors="replace") if isinstance(data, bytes) else data
    lines = [
        (no, ln.split("#", 1)[0].strip())
        for no, ln in enumerate(text.splitlines(), start=1)
    ]
    lines = [(no, ln) for no, ln in lines if ln]
    if not lines:
        raise HeaderParseError(1, "empty header")

    no, record_line = lines[0]
    parts = record_line.split()
    if len(parts) < 2:
        raise HeaderParseError(no, "record line needs at least a name and signal count")
    name = parts[0]
    if "/" in name:
        raise UnsupportedFormatError("multi-segment records are not supported")
    try:
        num_signals = int(parts[1])
    except ValueError:
        raise HeaderParseError(no, f"bad signal count {parts[1]!r}") from None
    if num_signals < 1:
        raise HeaderParseError(no, "record must declare at least one signal")
    fs = 250.0
    if len(parts) > 2:
        fs = _parse_number(parts[2].split("/")[0].split("(")[0], no, "sampling frequency")
    if fs <= 0:
        raise HeaderParseError(no, "sampling frequency must be positive")
    num_samples = 0
    if len(parts) > 3:
        num_samples = int(_parse_number(parts[3], no, "sample count"))

    if len(lines) - 1 < num_signals:
        raise HeaderParseError(lines[-1][0], f"expected {num_signals} signal lines")
    specs = []
    for no, line in lines[1:1 + num_signals]:
        specs.append(_parse_signal_line(no, line))
    return RecordHeader(name, num_signals, fs, num_samples, tuple(specs))


def _parse_signal_line(no: int, line: str) -> SignalSpec:
    parts = line.split()
    if len(parts) < 2:
        raise HeaderParseError(no, "signal line needs a file name and format")
    fmt = parts[1]
    for sep in ("x", ":", "+"):
        fmt = fmt.split(sep)[0]
    if fmt not in SUPPORTED_FORMATS:
        raise UnsupportedFormatError(f"header line {no}: format {fmt} not supported (only 212)")

    gain, baseline = 200.0, None
    if len(parts) > 2:
        gain_tok = parts[2].split("/")[0]
        if "(" in gain_tok:
            gain_tok, base_tok = gain_tok.split("(", 1)
            baseline = int(_parse_number(base_tok.rstrip(")"), no, "baseline"))
        gain = _parse_number(gain_tok, no, "gain") or 200.0
    adc_zero = int(_parse_number(parts[4], no, "ADC zero")) if len(parts) > 4 else 0
    init_value = int(_parse_number(parts[5], no, "initial value")) if len(parts) > 5 else None
    description = " ".join(parts[8:]) if len(parts) > 8 else ""
    return SignalSpec(
        file_name=parts[0],
        fmt=fmt,
        gain=gain,
        baseline=adc_zero if baseline is None else baseline,
        channel_name=description,
        adc_zero=adc_zero,
        init_value=init_value,
    )


# --------------------------------------------------------------------------
# Format 212
# --------------------------------------------------------------------------

def decode_format212(data: bytes, num_samples_per_channel: int, num_signals: int = 2) -> np.ndarray:
    """Unpack format-212 bytes into an ``(num_samples, num_signals)`` int array.

    Samples are interleaved frame by frame; every pair of consecutive samples
    occupies three bytes.
    """
    total = num_samples_per_channel * num_signals
    needed = math.ceil(3 * total / 2)
    if len(data) < needed:
        raise TruncatedDataError(len(data), f"format 212 data truncated, need {needed} bytes")
    raw = np.frombuffer(data, dtype=np.uint8, count=needed).astype(np.int32)
    pad = (-len(raw)) % 3
    if pad:
        raw = np.concatenate([raw, np.zeros(pad, dtype=np.int32)])
    triples = raw.reshape(-1, 3)
    s1 = triples[:, 0] | ((triples[:, 1] & 0x0F) << 8)
    s2 = triples[:, 2] | ((triples[:, 1] & 0xF0) << 4)
    flat = np.empty(2 * len(triples), dtype=np.int32)
    flat[0::2] = s1
    flat[1::2] = s2
    flat = flat[:total]
    flat[flat > 2047] -= 4096
    return flat.reshape(num_samples_per_channel, num_signals)


def encode_format212(samples: np.ndarray) -> bytes:
    """Pack integer samples (``(n,)`` or ``(n, nsig)``) into format 212."""
    flat = np.asarray(samples, dtype=np.int64).reshape(-1)
    if flat.size and (flat.min() < -2048 or flat.max() > 2047):
        raise WfdbError("format 212 samples must lie in [-2048, 2047]")
    flat = flat & 0xFFF
    if len(flat) % 2:
        flat = np.concatenate([flat, [0]])
    s1, s2 = flat[0::2], flat[1::2]
    out = np.empty((len(s1), 3), dtype=np.uint8)
    out[:, 0] = s1 & 0xFF
    out[:, 1] = ((s1 >> 8) & 0x0F) | (((s2 >> 8) & 0x0F) << 4)
    out[:, 2] = s2 & 0xFF
    n_bytes = math.ceil(3 * len(np.asarray(samples).reshape(-1)) / 2)
    return out.tobytes()[:n_bytes]


def adc_to_mv(adc: np.ndarray, gain: float, baseline: int) -> np.ndarray:
    return (np.asarray(adc, dtype=float) - baseline) / gain


def mv_to_adc(mv: np.ndarray, gain: float, baseline: int) -> np.ndarray:
    return np.round(np.asarray(mv, dtype=float) * gain + baseline).astype(np.int64)


# --------------------------------------------------------------------------
# Annotations
# --------------------------------------------------------------------------

def read_annotation_entries(data: bytes) -> list[AnnotationEntry]:
    """Decode every annotation (beats and non-beats) in an MIT annotation file."""
    entries: list[AnnotationEntry] = []
    words = len(data) // 2
    pos = 0
    time = 0
    chan = num = 0
    pending: dict | None = None

    def flush():
        if pending is not None:
            entries.append(AnnotationEntry(**pending))

    while pos < words:
        word = data[2 * pos] | (data[2 * pos + 1] << 8)
        code, value = word >> 10, word & 0x3FF
        pos += 1
        if code == 0 and value == 0:
            break
        if code == _SKIP:
            if pos + 2 > words:
                raise TruncatedDataError(2 * pos, "SKIP interval truncated")
            hi = data[2 * pos] | (data[2 * pos + 1] << 8)
            lo = data[2 * pos + 2] | (data[2 * pos + 3] << 8)
            pos += 2
            skip = (hi << 16) | lo
            if skip & 0x80000000:
                skip -= 1 << 32
            time += skip
            if time < 0:
                raise WfdbError(f"annotation time offset overflow at byte {2 * pos}")
        elif code == _NUM:
            num = value - 1024 if value > 511 else value
            if pending is not None:
                pending["num"] = num
        elif code == _SUB:
            if pending is not None:
                pending["sub"] = value
        elif code == _CHN:
            chan = value
            if pending is not None:
                pending["chan"] = chan
        elif code == _AUX:
            n_bytes = value
            start = 2 * pos
            if start + n_bytes > len(data):
                raise TruncatedDataError(start, "AUX string truncated")
            if pending is not None:
                pending["aux"] = bytes(data[start:start + n_bytes])
            pos += (n_bytes + 1) // 2
        else:
            flush()
            time += value
            if time > np.iinfo(np.int64).max // 2:
                raise WfdbError(f"annotation time offset overflow at byte {2 * pos}")
            pending = dict(
                sample_index=time,
                code=code,
                symbol=ANNOTATION_SYMBOLS.get(code, ""),
                sub=0,
                chan=chan,
                num=num,
            )
    flush()
    return entries


def parse_annotations(data: bytes, aami_map: dict[str, str] | None = None) -> list[BeatAnnotation]:
    """Beat annotations of an ``.atr`` stream; non-beat entries are dropped.

    Entries with a code outside the known table are skipped and counted in a
    warning.
    """
    aami_map = DEFAULT_AAMI_MAP if aami_map is None else aami_map
    beats = []
    unknown = 0
    for entry in read_annotation_entries(data):
        if entry.code not in ANNOTATION_SYMBOLS:
            unknown += 1
            continue
        if entry.code not in BEAT_CODES:
            continue
        beats.append(
            BeatAnnotation(entry.sample_index, entry.symbol, map_symbol_to_aami(entry.symbol, aami_map))
        )
    if unknown:
        log.warning("skipped %d annotations with unknown type codes", unknown)
    return beats


def encode_annotations(entries) -> bytes:
    """Write ``(sample_index, symbol)`` pairs (or AnnotationEntry) in MIT format.

    Used to build fixtures and synthetic records.
    """
    out = bytearray()
    prev = 0

    def word(code, value):
        w = (code << 10) | (value & 0x3FF)
        out.extend((w & 0xFF, w >> 8))

    for item in entries:
        if isinstance(item, AnnotationEntry):
            sample, code, aux = item.sample_index, item.code, item.aux
        else:
            sample, symbol = item
            code, aux = SYMBOL_CODES[symbol], b""
        delta = sample - prev
        if delta < 0:
            raise WfdbError("annotations must be written in time order")
        if delta > 1023:
            word(_SKIP, 0)
            for half in ((delta >> 16) & 0xFFFF, delta & 0xFFFF):
                out.extend((half & 0xFF, half >> 8))
            delta = 0
        word(code, delta)
        if aux:
            word(_AUX, len(aux))
            out.extend(aux)
            if len(aux) % 2:
                out.append(0)
        prev = sample
    out.extend(b"\x00\x00")
    return bytes(out)


_warned_symbols: set[str] = set()


def map_symbol_to_aami(symbol: str, aami_map: dict[str, str] | None = None) -> str:
    aami_map = DEFAULT_AAMI_MAP if aami_map is None else aami_map
    cls = aami_map.get(symbol)
    if cls is None:
        if symbol not in _warned_symbols:
            log.warning("unknown beat symbol %r mapped to Q", symbol)
            _warned_symbols.add(symbol)
        return "Q"
    return cls


# --------------------------------------------------------------------------
# Whole records
# --------------------------------------------------------------------------

def load_record(
    path: str | Path,
    channel: str = "MLII",
    annotation_ext: str = "atr",
    aami_map: dict[str, str] | None = None,
) -> Record:
    """Load ``<path>.hea``, its ``.dat`` file(s) and ``<path>.<annotation_ext>``.

    ``path`` is the record path without extension.
    """
    path = Path(path)
    hea = path.with_suffix(".hea") if path.suffix != ".hea" else path
    base = hea.with_suffix("")
    if not hea.exists():
        raise FileNotFoundError(f"record {base.name}: missing header {hea}")
    header = parse_header(hea.read_bytes())
    if header.num_samples <= 0:
        raise WfdbError(f"record {header.record_name}: header does not state a sample count")

    groups: dict[str, list[int]] = {}
    for i, spec in enumerate(header.signals):
        groups.setdefault(spec.file_name, []).append(i)
    signals: list[np.ndarray | None] = [None] * header.num_signals
    for file_name, idx in groups.items():
        dat = hea.parent / file_name
        if not dat.exists():
            raise FileNotFoundError(f"record {header.record_name}: missing data file {dat}")
        digital = decode_format212(dat.read_bytes(), header.num_samples, len(idx))
        for col, sig_i in enumerate(idx):
            spec = header.signals[sig_i]
            signals[sig_i] = adc_to_mv(digital[:, col], spec.gain, spec.baseline)

    ann_path = base.with_suffix("." + annotation_ext)
    annotations = parse_annotations(ann_path.read_bytes(), aami_map) if ann_path.exists() else []
    return Record(header, tuple(signals), tuple(annotations), _pick_channel(header, channel))


def _pick_channel(header: RecordHeader, preferred: str) -> int:
    idx = header.channel_index(preferred)
    if idx is None:
        log.warning("record %s has no %s channel, using channel 0", header.record_name, preferred)
        return 0
    return idx


def write_record(
    directory: str | Path,
    name: str,
    signals_mv: np.ndarray,
    fs: float,
    beats,
    channel_names=("MLII", "V1"),
    gain: float = 200.0,
    baseline: int = 1024,
) -> Path:
    """Write a format-212 record plus annotations; the inverse of :func:`load_record`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sig = np.asarray(signals_mv, dtype=float)
    if sig.ndim == 1:
        sig = sig[:, None]
    n, nsig = sig.shape
    adc = np.clip(mv_to_adc(sig, gain, baseline), -2048, 2047)
    (directory / f"{name}.dat").write_bytes(encode_format212(adc))
    lines = [f"{name} {nsig} {fs:g} {n}"]
    for ch in range(nsig):
        label = channel_names[ch] if ch < len(channel_names) else f"ch{ch}"
        lines.append(f"{name}.dat 212 {gain:g} 11 {baseline} {int(adc[0, ch])} 0 0 {label}")
    (directory / f"{name}.hea").write_text("\n".join(lines) + "\n")
    (directory / f"{name}.atr").write_bytes(encode_annotations(beats))
    return directory / name


def load_csv_record(
    signal_csv: str | Path,
    annotation_csv: str | Path,
    fs: float,
    name: str | None = None,
    aami_map: dict[str, str] | None = None,
) -> Record:
    """CSV fallback: ``sample_index,amplitude_mV`` plus ``sample_index,symbol``."""
    signal_csv, annotation_csv = Path(signal_csv), Path(annotation_csv)
    with signal_csv.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("sample")]
    idx = np.array([int(r[0]) for r in rows])
    if len(idx) and not np.array_equal(idx, np.arange(len(idx))):
        raise WfdbError(f"{signal_csv}: sample indices must be 0..n-1 in order")
    amp = np.array([float(r[1]) for r in rows])
    with annotation_csv.open(newline="") as fh:
        ann_rows = [r for r in csv.reader(fh) if r and not r[0].startswith("sample")]
    beats = tuple(
        BeatAnnotation(int(r[0]), r[1], map_symbol_to_aami(r[1], aami_map)) for r in ann_rows
    )
    name = name or signal_csv.stem
    spec = SignalSpec(signal_csv.name, "csv", 1.0, 0, "MLII")
    header = RecordHeader(name, 1, float(fs), len(amp), (spec,))
    return Record(header, (amp,), beats, 0)


def aami_counts(beats) -> Counter:
    return Counter(b.aami_class for b in beats)
