"""On-disk formats: binary snapshots, checkpoints, CSV/JSON logs.

Every writer goes through :func:`atomic_write`, so an interrupted process
leaves either the old file or the new one, never a truncated file.

Snapshot layout (little endian)::

    magic   4 bytes  b"LSNP"
    version u32
    n_t     u32      payload has n_t + 1 rows
    n_u     u32
    dt      f64
    dx      f64
    n_par   u32
    mu      n_par x f64
    payload (n_t + 1) * n_u x f64, row-major
"""

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import StorageError
from .fom import ParameterGrid, SpaceTimeGrid
from .gp import GPCoefficientSurrogate, GPModel, RBFKernelParams
from .nn import Autoencoder, MLPParams
from .sindy import SindyLibrary

MAGIC = b"LSNP"
VERSION = 1
_HEADER = struct.Struct("<4sIIIddI")
HEATMAP_HEADER = ["p1", "p2", "max_rel_error", "max_std", "sampled"]


def atomic_write(path, data, durable=False):
    """Write via a temp file in the same directory and rename it into place.

    The rename alone protects against a killed process; ``durable`` also
    fsyncs before renaming so the data survives power loss.
    """
    path = Path(path)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, mode) as fh:
                fh.write(data)
                if durable:
                    fh.flush()
                    os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc


def encode_snapshot(u, dt, dx, mu):
    u = np.ascontiguousarray(u, dtype="<f8")
    mu = np.asarray(mu, dtype="<f8").ravel()
    if u.ndim != 2:
        raise ValueError("snapshot payload must be 2-D")
    header = _HEADER.pack(MAGIC, VERSION, u.shape[0] - 1, u.shape[1], float(dt), float(dx), mu.size)
    return header + mu.tobytes() + u.tobytes()


def decode_snapshot(blob):
    """Return ``(u, meta)`` from bytes written by :func:`encode_snapshot`."""
    if len(blob) < _HEADER.size:
        raise StorageError("snapshot file is truncated")
    magic, version, n_t, n_u, dt, dx, n_par = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise StorageError("not a snapshot file (bad magic)")
    if version != VERSION:
        raise StorageError(f"unsupported snapshot version {version}")
    off = _HEADER.size
    payload = (n_t + 1) * n_u * 8
    if len(blob) != off + 8 * n_par + payload:
        raise StorageError("snapshot payload length does not match its header")
    mu = np.frombuffer(blob, dtype="<f8", count=n_par, offset=off).astype(np.float64)
    u = np.frombuffer(blob, dtype="<f8", count=(n_t + 1) * n_u, offset=off + 8 * n_par)
    u = u.astype(np.float64).reshape(n_t + 1, n_u)
    return u, {"n_t": n_t, "n_u": n_u, "dt": dt, "dx": dx, "mu": mu}


def write_snapshot(path, u, dt, dx, mu):
    atomic_write(path, encode_snapshot(u, dt, dx, mu))


def read_snapshot(path):
    return decode_snapshot(_read_bytes(path))


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(_read_bytes(path).decode())
    except json.JSONDecodeError as exc:
        raise StorageError(f"{path} is not valid JSON: {exc}") from exc


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write(path, buf.getvalue())


def read_csv(path):
    return list(csv.DictReader(io.StringIO(_read_bytes(path).decode())))


@dataclass
class Checkpoint:
    """Everything needed to run ROM predictions without retraining."""

    ae: Autoencoder
    surrogate: GPCoefficientSurrogate
    library: SindyLibrary
    grid: SpaceTimeGrid
    param_grid: ParameterGrid
    xi: np.ndarray
    viscosity: float
    epoch: int
    config: dict
    acquisitions: list

    @classmethod
    def from_state(cls, state, viscosity, config=None):
        surrogate = state.surrogate if state.surrogate is not None else state.fit_surrogate()
        acquisitions = [{"epoch": a.epoch, "mu": a.mu.tolist(), "max_std": a.max_std, "grid_index": a.grid_index}
                        for a in state.acquisition_log]
        return cls(state.ae, surrogate, state.config.library, state.grid, state.param_grid,
                   np.stack(state.xi), viscosity, state.epoch, config or {}, acquisitions)


def _pack_mlp(prefix, net, arrays):
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}_w{k}"] = w
        arrays[f"{prefix}_b{k}"] = b
    return list(net.layer_sizes)


def _unpack_mlp(prefix, sizes, arrays):
    n = len(sizes) - 1
    return MLPParams(sizes, [arrays[f"{prefix}_w{k}"].copy() for k in range(n)],
                     [arrays[f"{prefix}_b{k}"].copy() for k in range(n)])


def save_checkpoint(path, ckpt):
    arrays = {}
    enc_sizes = _pack_mlp("enc", ckpt.ae.encoder, arrays)
    dec_sizes = _pack_mlp("dec", ckpt.ae.decoder, arrays)
    arrays["xi"] = ckpt.xi
    sur = ckpt.surrogate
    arrays["gp_train_params"] = sur.train_params
    arrays["gp_inputs"] = sur.flat_models()[0].train_inputs
    arrays["gp_input_lo"] = sur.input_lo
    arrays["gp_input_hi"] = sur.input_hi
    models = sur.flat_models()
    arrays["gp_targets"] = np.stack([m.train_targets for m in models])
    arrays["gp_log_kernel"] = np.stack([m.kernel.to_log() for m in models])
    arrays["gp_target_mean"] = np.array([m.target_mean for m in models])
    arrays["gp_target_std"] = np.array([m.target_std for m in models])
    arrays["gp_degenerate"] = np.array([m.degenerate for m in models])
    arrays["param_sampled"] = ckpt.param_grid.sampled
    for d, b in enumerate(ckpt.param_grid.breakpoints):
        arrays[f"param_breaks_{d}"] = b
    meta = {
        "encoder_sizes": enc_sizes,
        "decoder_sizes": dec_sizes,
        "gp_shape": list(sur.shape),
        "library": {"latent_dim": ckpt.library.latent_dim, "include_constant": ckpt.library.include_constant},
        "grid": asdict(ckpt.grid),
        "param_names": list(ckpt.param_grid.names),
        "param_dims": ckpt.param_grid.dim,
        "viscosity": ckpt.viscosity,
        "epoch": ckpt.epoch,
        "config": ckpt.config,
        "acquisitions": ckpt.acquisitions,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write(path, buf.getvalue(), durable=True)


def load_checkpoint(path):
    blob = _read_bytes(path)
    try:
        with np.load(io.BytesIO(blob), allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (ValueError, OSError) as exc:
        raise StorageError(f"{path} is not a checkpoint: {exc}") from exc
    meta = json.loads(arrays["meta"].tobytes().decode())
    ae = Autoencoder(_unpack_mlp("enc", meta["encoder_sizes"], arrays),
                     _unpack_mlp("dec", meta["decoder_sizes"], arrays))
    rows, cols = meta["gp_shape"]
    flat = []
    for i in range(rows * cols):
        flat.append(GPModel(RBFKernelParams.from_log(arrays["gp_log_kernel"][i]), arrays["gp_inputs"],
                            arrays["gp_targets"][i], arrays["gp_input_lo"], arrays["gp_input_hi"],
                            float(arrays["gp_target_mean"][i]), float(arrays["gp_target_std"][i]),
                            degenerate=bool(arrays["gp_degenerate"][i])))
    surrogate = GPCoefficientSurrogate([flat[r * cols:(r + 1) * cols] for r in range(rows)],
                                       arrays["gp_train_params"])
    param_grid = ParameterGrid([arrays[f"param_breaks_{d}"] for d in range(meta["param_dims"])],
                               meta["param_names"], arrays["param_sampled"])
    return Checkpoint(ae, surrogate, SindyLibrary(**meta["library"]), SpaceTimeGrid(**meta["grid"]),
                      param_grid, arrays["xi"], meta["viscosity"], meta["epoch"], meta["config"],
                      meta["acquisitions"])
