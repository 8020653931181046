"""Tile-machine description and its flat key = value config file format."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

DTYPES = ("fp16", "fp32")
BYTES_PER_ELEMENT = {"fp16": 2, "fp32": 4}

# Modeled size of one bucket bookkeeping entry (block row/col, partition,
# value offset) in bytes.
META_ENTRY_BYTES = 8

_INT_KEYS = ("tiles", "tile_memory_bytes", "sync_cycles")


@dataclass(frozen=True)
class MachineConfig:
    """Bulk-synchronous tile machine: counts, rates and cost-model knobs.

    Defaults describe a 1472-tile part with 625KB of SRAM per tile and a
    1.85 GHz clock.  The MAC rates, exchange bandwidth and sync cost are
    calibration knobs of the analytic cost model, not measured values.
    """

    tiles: int = 1472
    tile_memory_bytes: int = 625 * 1024
    clock_hz: float = 1.85e9
    exchange_bytes_per_cycle: float = 5888.0
    sync_cycles: int = 50
    macs_fp16_b1: float = 16.0
    macs_fp16_b4: float = 32.0
    macs_fp16_b8: float = 48.0
    macs_fp16_b16: float = 64.0
    macs_fp32_b1: float = 8.0
    macs_fp32_b4: float = 16.0
    macs_fp32_b8: float = 24.0
    macs_fp32_b16: float = 32.0
    meta_overhead_cycles: float = 2.0
    headroom: float = 1.5

    def __post_init__(self):
        if self.tiles < 1:
            raise ValueError("need at least one tile")
        for name in (
            "tile_memory_bytes",
            "clock_hz",
            "exchange_bytes_per_cycle",
            "headroom",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sync_cycles < 0 or self.meta_overhead_cycles < 0:
            raise ValueError("cycle overheads must be non-negative")
        for dtype in DTYPES:
            rates = [self.macs_per_cycle(dtype, b) for b in (1, 4, 8, 16)]
            if min(rates) <= 0:
                raise ValueError("MAC rates must be positive")
            if any(lo > hi for lo, hi in zip(rates, rates[1:])):
                raise ValueError(f"{dtype} MAC rate must be non-decreasing in block size")
        for b in (1, 4, 8, 16):
            if self.macs_per_cycle("fp16", b) < self.macs_per_cycle("fp32", b):
                raise ValueError("fp16 MAC rate must be >= fp32 at each block size")

    def macs_per_cycle(self, dtype: str, b: int) -> float:
        try:
            return getattr(self, f"macs_{dtype}_b{b}")
        except AttributeError:
            raise ValueError(f"unknown dtype/block combination ({dtype}, {b})") from None

    def bytes_per_element(self, dtype: str) -> int:
        try:
            return BYTES_PER_ELEMENT[dtype]
        except KeyError:
            raise ValueError(f"unknown dtype {dtype!r}") from None


_FILE_KEYS = tuple(f.name for f in fields(MachineConfig))


def load_machine_config(path) -> MachineConfig:
    """Parse a flat `key = value` machine file; unknown keys are rejected.

    Blank lines and lines starting with '#' are ignored.  Keys missing from
    the file keep their defaults.
    """
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = (part.strip() for part in line.partition("="))
            if key not in _FILE_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            if key in overrides:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            try:
                overrides[key] = int(value) if key in _INT_KEYS else float(value)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad number {value!r} for {key}") from None
    return replace(MachineConfig(), **overrides)


def save_machine_config(config: MachineConfig, path) -> None:
    """Write every config key as one `key = value` line."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in _FILE_KEYS:
            value = getattr(config, key)
            fh.write(f"{key} = {value:g}\n" if isinstance(value, float) else f"{key} = {value}\n")
