"""File formats: binary photon tensors, 8/16-bit images, CSV tables, key=value configs."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .changepoint import PixelChangepoints
from .core import FluxImage, PhotonFrameTensor, QisFrameTensor, SensorConfig, as_array

MAGIC_SPF = b"SPF1"
MAGIC_SQF = b"SQF1"
_HEADER = struct.Struct("<4sIIIIdd")


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


def write_tensor(path, tensor) -> None:
    """``.spf`` (u16 bin indices) or ``.sqf`` (u8 binary frames), frame-major, little-endian."""
    if isinstance(tensor, PhotonFrameTensor):
        magic, body = MAGIC_SPF, tensor.data.astype("<u2", copy=False)
        if tensor.config.bins_per_frame > 65535:
            raise FormatError(".spf stores 16-bit bin indices")
    elif isinstance(tensor, QisFrameTensor):
        magic, body = MAGIC_SQF, tensor.data.astype("u1", copy=False)
    else:
        raise TypeError("expected PhotonFrameTensor or QisFrameTensor")
    cfg = tensor.config
    n, h, w = tensor.data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, w, h, n, cfg.bins_per_frame, cfg.bin_width, cfg.detection_efficiency))
        fh.write(np.ascontiguousarray(body).tobytes())


def read_tensor(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than the header")
    magic, w, h, n, bins, bw, q = _HEADER.unpack_from(raw)
    try:
        cfg = SensorConfig(bins, bw, q)
    except ValueError as exc:
        raise FormatError(f"invalid sensor header: {exc}") from exc
    if magic == MAGIC_SPF:
        dtype, cls = np.dtype("<u2"), PhotonFrameTensor
    elif magic == MAGIC_SQF:
        dtype, cls = np.dtype("u1"), QisFrameTensor
    else:
        raise FormatError(f"unknown magic {magic!r}")
    need = n * h * w * dtype.itemsize
    if len(raw) - _HEADER.size != need:
        raise FormatError(f"payload is {len(raw) - _HEADER.size} bytes, expected {need}")
    data = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape(n, h, w)
    if cls is PhotonFrameTensor:
        data = data.astype(cfg.index_dtype)
    try:
        return cls(data.copy(), cfg)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_image(path, image, bits: int = 16, vmin: float | None = None, vmax: float | None = None) -> dict:
    """Linear min-max map of flux to 8/16-bit PGM or PNG; the mapping goes to ``<path>.json``."""
    a = as_array(image)
    lo = float(a.min()) if vmin is None else vmin
    hi = float(a.max()) if vmax is None else vmax
    top = (1 << bits) - 1
    scale = top / (hi - lo) if hi > lo else 0.0
    q = np.clip(np.round((a - lo) * scale), 0, top).astype(np.uint16 if bits == 16 else np.uint8)
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        with open(path, "wb") as fh:
            fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n{top}\n".encode())
            fh.write(q.astype(">u2" if bits == 16 else "u1").tobytes())
    else:
        Image.fromarray(q).save(path)
    meta = {"min_flux": lo, "max_flux": hi, "bits": bits}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1))
    return meta


def read_image(path) -> np.ndarray:
    """PGM/PNG as float (flux units when a mapping sidecar exists) or a CSV matrix."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return np.loadtxt(path, delimiter=",", ndmin=2)
    with Image.open(path) as im:
        a = np.asarray(im).astype(np.float64)
    if a.ndim == 3:
        a = a[..., :3].mean(axis=2)
    side = Path(str(path) + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
        top = (1 << meta["bits"]) - 1
        a = meta["min_flux"] + a * (meta["max_flux"] - meta["min_flux"]) / top
    return a


def write_flux_csv(path, image) -> None:
    np.savetxt(path, as_array(image), delimiter=",", fmt="%.10g")


def write_table(path, rows: list[dict], header: list[str] | None = None) -> None:
    """CSV with a fixed column order and repr-stable float formatting."""
    header = header or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(r.get(k, "")) for k in header])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def parse_value(text: str):
    t = text.strip()
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    if "," in t:
        return [parse_value(p) for p in t.split(",") if p.strip()]
    return t


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; comma lists become lists."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = parse_value(v)
    return out


def write_config(path, values: dict) -> None:
    lines = []
    for k, v in values.items():
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_trajectory_csv(path, transforms) -> None:
    """Ground-truth or recovered motion as (step, theta_deg, tx_px, ty_px)."""
    rows = [{"step": i, "theta_deg": np.rad2deg(t.theta), "tx_px": t.tx, "ty_px": t.ty} for i, t in enumerate(transforms)]
    write_table(path, rows, ["step", "theta_deg", "tx_px", "ty_px"])


def flux_image_from(path) -> FluxImage:
    return FluxImage(np.maximum(read_image(path), 0.0))


def save_changepoints(path, cps: PixelChangepoints) -> None:
    """Ragged per-pixel segmentations as an uncompressed ``.npz``."""
    with open(path, "wb") as fh:
        np.savez(fh, shape=np.array([cps.height, cps.width, cps.n_frames]), offsets=cps.offsets,
                 frame_bounds=cps.frame_bounds, measure_bounds=cps.measure_bounds,
                 penalty=np.array(cps.penalty_used), method=np.array(cps.method))


def load_changepoints(path) -> PixelChangepoints:
    try:
        with np.load(path, allow_pickle=False) as z:
            h, w, n = (int(v) for v in z["shape"])
            cps = PixelChangepoints(h, w, n, z["offsets"].astype(np.int64), z["frame_bounds"].astype(np.int64),
                                    z["measure_bounds"].astype(np.int64), float(z["penalty"]), str(z["method"]))
    except (KeyError, ValueError, OSError) as exc:
        raise FormatError(f"not a changepoint file: {exc}") from exc
    if len(cps.offsets) != h * w + 1 or cps.offsets[-1] != len(cps.frame_bounds):
        raise FormatError("inconsistent changepoint offsets")
    return cps
