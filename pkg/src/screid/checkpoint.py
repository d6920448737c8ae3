"""Checkpoint serialization.

Binary layout, all little-endian:

    magic "SCCK" | version uint32 | block count uint32 | blocks...

Each block is a named float64 tensor:

    name length uint32 | name utf-8 bytes | ndim uint32 | dims uint32* | float64 data

Run metadata (config, completed epoch count, per-epoch loss records)
rides along as one block whose payload is a JSON document's bytes
widened to float64, so the wire format stays uniform.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .errors import ConfigError, DataFormatError
from .memory import MemoryBanks
from .model import ModelParams
from .trainer import EpochRecord, SGDMomentum, build_trainer_state

MAGIC = b"SCCK"
FORMAT_VERSION = 1

_META_BLOCK = "__meta_json__"


def _encode_block(out, name: str, array: np.ndarray):
    data = np.ascontiguousarray(array, dtype="<f8")
    name_bytes = name.encode("utf-8")
    out.write(struct.pack("<I", len(name_bytes)))
    out.write(name_bytes)
    out.write(struct.pack("<I", data.ndim))
    out.write(struct.pack(f"<{data.ndim}I", *data.shape))
    out.write(data.tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise DataFormatError(f"checkpoint truncated while reading {what}")
    return data


def _decode_block(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "block name length"))
    name = _read_exact(fh, name_len, "block name").decode("utf-8")
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4, f"rank of {name}"))
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"shape of {name}"))
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    payload = _read_exact(fh, 8 * count, f"data of {name}")
    array = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return name, array


def _meta_to_array(meta: dict) -> np.ndarray:
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float64)


def _meta_from_array(array: np.ndarray) -> dict:
    raw = np.asarray(array).astype(np.uint8).tobytes()
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"checkpoint metadata block is corrupt: {exc}") from None


def save_checkpoint(
    path: str,
    params: ModelParams,
    banks: MemoryBanks,
    optimizer: SGDMomentum,
    records: list[EpochRecord],
    epochs_completed: int,
    config_dict: dict,
):
    meta = {
        "epochs_completed": epochs_completed,
        "num_samples": banks.num_samples,
        "config": config_dict,
        "records": [dataclasses.asdict(r) for r in records],
    }
    blocks: list[tuple[str, np.ndarray]] = [(_META_BLOCK, _meta_to_array(meta))]
    for name, tensor in params.named_parameters().items():
        blocks.append((f"param/{name}", tensor.data))
    for name, buf in params.named_buffers().items():
        blocks.append((f"buffer/{name}", buf))
    for name, vel in optimizer.velocity.items():
        blocks.append((f"velocity/{name}", vel))
    blocks.append(("bank/global", banks.global_bank))
    blocks.append(("bank/local", banks.local_bank))
    blocks.append(("bank/mixture", banks.mixture_bank))
    blocks.append(("bank/global_initialized", banks.global_initialized.astype(np.float64)))
    blocks.append(("bank/local_initialized", banks.local_initialized.astype(np.float64)))
    blocks.append(("bank/mixture_initialized", banks.mixture_initialized.astype(np.float64)))
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<I", FORMAT_VERSION))
        out.write(struct.pack("<I", len(blocks)))
        for name, array in blocks:
            _encode_block(out, name, array)


def read_blocks(path: str) -> dict[str, np.ndarray]:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataFormatError(f"cannot read checkpoint {path}: {exc}") from None
    with fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise DataFormatError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise DataFormatError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "block count"))
        blocks: dict[str, np.ndarray] = {}
        for _ in range(count):
            name, array = _decode_block(fh)
            if name in blocks:
                raise DataFormatError(f"duplicate checkpoint block {name!r}")
            blocks[name] = array
        if fh.read(1):
            raise DataFormatError("trailing bytes after final checkpoint block")
    return blocks


@dataclasses.dataclass
class LoadedCheckpoint:
    params: ModelParams
    banks: MemoryBanks
    optimizer: SGDMomentum
    records: list[EpochRecord]
    epochs_completed: int
    run_config: "RunConfig"  # noqa: F821 - resolved at load time


def _restore(name: str, target: np.ndarray, blocks: dict[str, np.ndarray]):
    if name not in blocks:
        raise DataFormatError(f"checkpoint is missing block {name!r}")
    source = blocks.pop(name)
    if source.shape != target.shape:
        raise DataFormatError(
            f"checkpoint block {name!r} has shape {source.shape}, expected {target.shape}"
        )
    target[...] = source


def load_checkpoint(path: str) -> LoadedCheckpoint:
    """Rebuild trainer state from a checkpoint.

    The architecture and hyperparameters come from the config snapshot
    stored in the file itself; shape mismatches are format errors.
    """
    from .config import config_from_dict  # deferred to avoid an import cycle

    blocks = read_blocks(path)
    if _META_BLOCK not in blocks:
        raise DataFormatError(f"checkpoint is missing block {_META_BLOCK!r}")
    meta = _meta_from_array(blocks.pop(_META_BLOCK))
    for key in ("epochs_completed", "num_samples", "config", "records"):
        if key not in meta:
            raise DataFormatError(f"checkpoint metadata lacks {key!r}")
    records = [EpochRecord(**r) for r in meta["records"]]
    try:
        run_config = config_from_dict(meta["config"])
    except ConfigError as exc:
        raise DataFormatError(f"checkpoint config snapshot is invalid: {exc}") from None
    num_samples = int(meta["num_samples"])
    dims = run_config.model_dims()
    params, banks, opt = build_trainer_state(num_samples, dims, run_config.train_config(num_samples))
    for name, tensor in params.named_parameters().items():
        _restore(f"param/{name}", tensor.data, blocks)
    for name, buf in params.named_buffers().items():
        _restore(f"buffer/{name}", buf, blocks)
    for name in opt.velocity:
        _restore(f"velocity/{name}", opt.velocity[name], blocks)
    _restore("bank/global", banks.global_bank, blocks)
    _restore("bank/local", banks.local_bank, blocks)
    _restore("bank/mixture", banks.mixture_bank, blocks)
    for bank_name, flags in (
        ("global", banks.global_initialized),
        ("local", banks.local_initialized),
        ("mixture", banks.mixture_initialized),
    ):
        name = f"bank/{bank_name}_initialized"
        if name not in blocks:
            raise DataFormatError(f"checkpoint is missing block {name!r}")
        source = blocks.pop(name)
        if source.shape != flags.shape:
            raise DataFormatError(
                f"checkpoint block {name!r} has shape {source.shape}, expected {flags.shape}"
            )
        flags[...] = source != 0.0
    if blocks:
        extras = ", ".join(sorted(blocks))
        raise DataFormatError(f"checkpoint has unexpected blocks: {extras}")
    return LoadedCheckpoint(
        params=params,
        banks=banks,
        optimizer=opt,
        records=records,
        epochs_completed=int(meta["epochs_completed"]),
        run_config=run_config,
    )
