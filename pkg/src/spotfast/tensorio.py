"""Binary tensor container and checkpoint archives.

Container layout::

    b"SFTENS01"
    {"shape": [...], "dtype": "u8", "order": "THWC", ...}\\n
    <row-major little-endian payload>

Extra JSON keys in the header line are allowed and round-trip untouched
(clips use them for ``label`` and ``boundary``).
"""
import io
import json
import zipfile

import numpy as np

MAGIC = b"SFTENS01"

# u8/f32 are the clip formats; the wider types only occur in checkpoints
# (float64 models, batchnorm step counters).
_DTYPES = {
    "u8": np.dtype("<u1"),
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
}
_CODES = {v: k for k, v in _DTYPES.items()}


class ContainerError(ValueError):
    pass


def encode_tensor(array, order="", **meta) -> bytes:
    array = np.asarray(array)
    dt = array.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise ContainerError(f"unsupported dtype {array.dtype}")
    header = {"shape": list(array.shape), "dtype": _CODES[dt], "order": order}
    header.update(meta)
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(array, dtype=dt).tobytes(order="C")
    return MAGIC + line + b"\n" + payload


def decode_tensor(blob: bytes):
    """Return ``(array, header)`` from container bytes."""
    if not blob.startswith(MAGIC):
        raise ContainerError("bad magic")
    end = blob.index(b"\n", len(MAGIC))
    header = json.loads(blob[len(MAGIC):end].decode("utf-8"))
    try:
        dt = _DTYPES[header["dtype"]]
    except KeyError:
        raise ContainerError(f"unknown dtype {header.get('dtype')!r}") from None
    shape = tuple(header["shape"])
    payload = blob[end + 1:]
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(payload) != expected:
        raise ContainerError(f"payload is {len(payload)} bytes, header implies {expected}")
    array = np.frombuffer(payload, dtype=dt).reshape(shape)
    return array.astype(dt.newbyteorder("="), copy=True), header


def write_tensor(path, array, order="", **meta):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array, order=order, **meta))


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def read_header(path):
    """Parse only the header line; the payload is not read."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ContainerError(f"{path}: bad magic")
        return json.loads(fh.readline().decode("utf-8"))


# Checkpoints are stored zip archives (no compression, fixed timestamps, so
# identical state produces identical bytes):
#   config.json            JSON config echo plus caller metadata
#   tensors.json           ordered list of tensor names
#   tensors/<name>.sft     one container per named tensor

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _add(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, data)


def save_archive(path, tensors: dict, config: dict):
    """Write named numpy arrays and a JSON-serializable config to ``path``."""
    names = list(tensors)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _add(zf, "config.json", json.dumps(config, sort_keys=True, indent=1))
        _add(zf, "tensors.json", json.dumps(names))
        for name in names:
            _add(zf, f"tensors/{name}.sft", encode_tensor(tensors[name]))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_archive(path):
    """Return ``(tensors, config)``; tensors keep their saved order."""
    with zipfile.ZipFile(path) as zf:
        config = json.loads(zf.read("config.json"))
        names = json.loads(zf.read("tensors.json"))
        tensors = {}
        for name in names:
            tensors[name], _ = decode_tensor(zf.read(f"tensors/{name}.sft"))
    return tensors, config
