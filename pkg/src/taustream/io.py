"""Persistence: datasets, weights, quantized weights, event streams, reports.

Binary formats are little-endian with a 16-byte magic+version header and
refuse unknown versions.  The float-weights file is line-oriented UTF-8 with
shortest round-trip decimal floats, so write -> read reproduces the exact
in-memory doubles; a sha256 content hash seals every artifact and downstream
artifacts embed the hashes of their inputs (dataset -> weights -> quantized
weights -> reports), forming a verifiable provenance chain.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from . import quant, rnn, sim

DATASET_MAGIC = b"TSDSET01"
EVENTS_MAGIC = b"TSEVT001"
QWEIGHTS_MAGIC = b"TSQWGT01"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<II", FORMAT_VERSION, 0)


def _check_header(f, magic: bytes, path):
    head = f.read(16)
    if len(head) != 16 or head[:8] != magic:
        raise FormatError(f"{path}: bad magic, not a {magic.decode()} file")
    version, _ = struct.unpack("<II", head[8:])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# dataset


def write_dataset(ds: sim.Dataset, path) -> str:
    """Binary dataset container; returns the file's sha256."""
    path = Path(path)
    config = dict(ds.config.to_dict(), master_seed=ds.master_seed, rng=ds.rng_name)
    cfg_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_header(DATASET_MAGIC))
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        f.write(struct.pack("<I", ds.n_samples))
        for i in range(ds.n_samples):
            ts = ds.timestamps_ns[i]
            f.write(struct.pack("<I", 1))  # mono-exponential truth block
            f.write(struct.pack("<d", float(ds.tau_ns[i])))
            f.write(struct.pack("<dd", float(1.0 - ds.background[i]), float(ds.background[i])))
            f.write(struct.pack("<ddd", float(ds.t0_ns[i]), ds.config.irf_fwhm_ns,
                                ds.config.period_ns))
            f.write(struct.pack("<I", ts.size))
            f.write(np.ascontiguousarray(ts, dtype="<f8").tobytes())
    return sha256_file(path)


def read_dataset(path) -> sim.Dataset:
    path = Path(path)
    with open(path, "rb") as f:
        _check_header(f, DATASET_MAGIC, path)
        (cfg_len,) = struct.unpack("<I", f.read(4))
        config = json.loads(f.read(cfg_len).decode("utf-8"))
        (n_samples,) = struct.unpack("<I", f.read(4))
        ds_cfg = sim.DatasetConfig.from_dict(config)
        n_photons = ds_cfg.photons_per_sample
        ts = np.empty((n_samples, n_photons))
        tau = np.empty(n_samples)
        t0 = np.empty(n_samples)
        bg = np.empty(n_samples)
        for i in range(n_samples):
            raw = f.read(4)
            if len(raw) < 4:
                raise FormatError(f"{path}: truncated at sample {i}")
            (n_comp,) = struct.unpack("<I", raw)
            if n_comp != 1:
                raise FormatError(f"{path}: sample {i} has {n_comp} components, expected 1")
            tau[i] = struct.unpack("<d", f.read(8))[0]
            _, bg[i] = struct.unpack("<dd", f.read(16))
            t0[i], _, _ = struct.unpack("<ddd", f.read(24))
            (count,) = struct.unpack("<I", f.read(4))
            if count != n_photons:
                raise FormatError(f"{path}: sample {i} photon count mismatch")
            buf = f.read(8 * count)
            if len(buf) < 8 * count:
                raise FormatError(f"{path}: truncated timestamps at sample {i}")
            ts[i] = np.frombuffer(buf, dtype="<f8")
        return sim.Dataset(
            config=ds_cfg,
            master_seed=int(config["master_seed"]),
            timestamps_ns=ts,
            tau_ns=tau,
            t0_ns=t0,
            background=bg,
            rng_name=config.get("rng", "unknown"),
        )


def export_dataset_csv(ds: sim.Dataset, path):
    """One row per photon: sample_id, timestamp_ns."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "timestamp_ns"])
        for i in range(ds.n_samples):
            for t in ds.timestamps_ns[i]:
                w.writerow([i, repr(float(t))])


# ---------------------------------------------------------------------------
# float weights (line-oriented text, exact decimal round trip)


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_weights(weights: rnn.RnnWeights, path) -> str:
    """Structured-text weights file; returns its sha256."""
    cfg = weights.config
    buf = _io.StringIO()
    buf.write("format: rnn-weights v1\n")
    buf.write("gate_convention: single-bias, candidate bias outside reset product\n")
    buf.write(f"variant: {cfg.variant}\n")
    buf.write(f"hidden_size: {cfg.hidden_size}\n")
    buf.write(f"head_hidden: {cfg.head_hidden}\n")
    buf.write(f"input_scale_ns: {_fmt_float(cfg.input_scale_ns)}\n")
    buf.write(f"output_scale_ns: {_fmt_float(cfg.output_scale_ns)}\n")
    buf.write(f"seed: {'' if weights.seed is None else weights.seed}\n")
    buf.write(f"dataset_hash: {weights.dataset_hash or ''}\n")
    for name, arr in weights.param_items():
        mat = np.atleast_2d(np.asarray(arr, dtype=np.float64))
        buf.write(f"tensor {name} {mat.shape[0]} {mat.shape[1]}\n")
        for row in mat:
            buf.write(" ".join(_fmt_float(v) for v in row) + "\n")
    body = buf.getvalue()
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    with open(path, "w") as f:
        f.write(body)
        f.write(f"hash: sha256:{digest}\n")
    return digest


def read_weights(path) -> rnn.RnnWeights:
    path = Path(path)
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0] != "format: rnn-weights v1":
        raise FormatError(f"{path}: not a rnn-weights v1 file")
    if not lines[-1].startswith("hash: sha256:"):
        raise FormatError(f"{path}: missing content hash")
    claimed = lines[-1].split("hash: sha256:")[1].strip()
    body = "\n".join(lines[:-1]) + "\n"
    actual = hashlib.sha256(body.encode("utf-8")).hexdigest()
    if actual != claimed:
        raise FormatError(f"{path}: content hash mismatch (file corrupt)")

    fields: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines) - 1:
        line = lines[i]
        if line.startswith("tensor "):
            _, name, rows, cols = line.split()
            rows, cols = int(rows), int(cols)
            data = [
                np.array([float(v) for v in lines[i + 1 + r].split()])
                for r in range(rows)
            ]
            mat = np.vstack(data)
            if mat.shape != (rows, cols):
                raise FormatError(f"{path}: tensor {name} shape mismatch")
            tensors[name] = mat
            i += 1 + rows
        else:
            key, _, value = line.partition(":")
            fields[key.strip()] = value.strip()
            i += 1

    cfg = rnn.RnnConfig(
        variant=fields["variant"],
        hidden_size=int(fields["hidden_size"]),
        head_hidden=int(fields["head_hidden"]),
        input_scale_ns=float(fields["input_scale_ns"]),
        output_scale_ns=float(fields["output_scale_ns"]),
    )
    try:
        return rnn.RnnWeights(
            config=cfg,
            w_in=tensors["w_in"][0],
            b=tensors["b"][0],
            u_hh=tensors["u_hh"],
            head_w1=tensors["head_w1"],
            head_b1=tensors["head_b1"][0],
            head_w2=tensors["head_w2"][0],
            head_b2=float(tensors["head_b2"][0, 0]),
            seed=int(fields["seed"]) if fields.get("seed") else None,
            dataset_hash=fields.get("dataset_hash") or None,
        )
    except KeyError as e:
        raise FormatError(f"{path}: missing tensor {e}") from e


# ---------------------------------------------------------------------------
# quantized weights (binary) + sidecar manifest


_VARIANT_CODES = {"simple": 0, "gru": 1, "lstm": 2}
_ROUNDING_CODES = {m: k for k, m in enumerate(quant.ROUNDING_MODES)}

_QTENSOR_ORDER = ("w_in", "b", "u_hh", "head_w1", "head_b1", "head_w2", "head_b2")


def write_quantized(qw: quant.QuantizedWeights, path) -> str:
    path = Path(path)
    cfg = qw.config
    with open(path, "wb") as f:
        f.write(_header(QWEIGHTS_MAGIC))
        f.write(struct.pack("<BBHH", _VARIANT_CODES[cfg.variant],
                            _ROUNDING_CODES[qw.rounding],
                            cfg.hidden_size, cfg.head_hidden))
        f.write(struct.pack("<BBBB", qw.weight_bits, qw.act_fmt.total_bits,
                            qw.act_fmt.frac_bits, 0))
        f.write(struct.pack("<dd", cfg.input_scale_ns, cfg.output_scale_ns))
        for name in _QTENSOR_ORDER:
            arr = np.atleast_2d(np.asarray(qw.tensors[name], dtype=np.int64))
            if name in qw.formats:
                frac = qw.formats[name].frac_bits
            else:
                frac = qw.bias_frac[name]
            f.write(struct.pack("<BII", frac, arr.shape[0], arr.shape[1]))
            f.write(np.ascontiguousarray(arr, dtype="<i8").tobytes())
    digest = sha256_file(path)
    manifest = path.with_suffix(path.suffix + ".manifest.txt")
    with open(manifest, "w") as f:
        f.write("format: quantized-weights v1 manifest\n")
        f.write(f"file_sha256: {digest}\n")
        f.write(f"float_weights_sha256: {qw.float_hash}\n")
        f.write(f"weight_bits: {qw.weight_bits}\n")
        f.write(f"activation_format: {qw.act_fmt.describe()}\n")
        f.write(f"rounding: {qw.rounding}\n")
    return digest


def read_quantized(path) -> quant.QuantizedWeights:
    path = Path(path)
    with open(path, "rb") as f:
        _check_header(f, QWEIGHTS_MAGIC, path)
        variant_code, rounding_code, hidden, head_hidden = struct.unpack("<BBHH", f.read(6))
        wbits, abits, afrac, _ = struct.unpack("<BBBB", f.read(4))
        in_scale, out_scale = struct.unpack("<dd", f.read(16))
        variant = {v: k for k, v in _VARIANT_CODES.items()}[variant_code]
        rounding = quant.ROUNDING_MODES[rounding_code]
        cfg = rnn.RnnConfig(variant=variant, hidden_size=hidden,
                            head_hidden=head_hidden, input_scale_ns=in_scale,
                            output_scale_ns=out_scale)
        tensors = {}
        formats = {}
        bias_frac = {}
        for name in _QTENSOR_ORDER:
            raw = f.read(9)
            if len(raw) < 9:
                raise FormatError(f"{path}: truncated before tensor {name}")
            frac, rows, cols = struct.unpack("<BII", raw)
            buf = f.read(8 * rows * cols)
            if len(buf) < 8 * rows * cols:
                raise FormatError(f"{path}: truncated tensor {name}")
            arr = np.frombuffer(buf, dtype="<i8").reshape(rows, cols).copy()
            if name in ("w_in", "head_w2"):
                tensors[name] = arr[0]
                formats[name] = quant.FixedPointFormat(wbits, frac, rounding=rounding)
            elif name in ("u_hh", "head_w1"):
                tensors[name] = arr
                formats[name] = quant.FixedPointFormat(wbits, frac, rounding=rounding)
            else:
                tensors[name] = arr[0]
                bias_frac[name] = frac
    manifest = path.with_suffix(path.suffix + ".manifest.txt")
    float_hash = ""
    if manifest.exists():
        for line in manifest.read_text().splitlines():
            if line.startswith("float_weights_sha256:"):
                float_hash = line.split(":", 1)[1].strip()
    return quant.QuantizedWeights(
        config=cfg,
        weight_bits=wbits,
        act_fmt=quant.FixedPointFormat(abits, afrac, rounding=rounding),
        rounding=rounding,
        tensors=tensors,
        formats=formats,
        bias_frac=bias_frac,
        float_hash=float_hash,
    )


# ---------------------------------------------------------------------------
# golden quantized-inference vectors


def write_golden_vectors(path, qweights_hash: str, vectors: list[dict]):
    """Text file of (input timestamps, expected final integer state)."""
    with open(path, "w") as f:
        f.write("format: golden-vectors v1\n")
        f.write(f"quantized_sha256: {qweights_hash}\n")
        f.write(f"n_vectors: {len(vectors)}\n")
        for k, vec in enumerate(vectors):
            ts = vec["timestamps_ns"]
            state = vec["final_state"]
            f.write(f"vector {k} steps {len(ts)}\n")
            f.write("inputs_ns: " + " ".join(_fmt_float(t) for t in ts) + "\n")
            f.write("final_h_int: " + " ".join(str(int(v)) for v in state) + "\n")


def read_golden_vectors(path) -> tuple[str, list[dict]]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "format: golden-vectors v1":
        raise FormatError(f"{path}: not a golden-vectors file")
    qhash = lines[1].split(":", 1)[1].strip()
    n = int(lines[2].split(":", 1)[1])
    vectors = []
    i = 3
    for _ in range(n):
        assert lines[i].startswith("vector ")
        ts = np.array([float(v) for v in lines[i + 1].split(":", 1)[1].split()])
        state = np.array([int(v) for v in lines[i + 2].split(":", 1)[1].split()],
                         dtype=np.int64)
        vectors.append({"timestamps_ns": ts, "final_state": state})
        i += 3
    return qhash, vectors


# ---------------------------------------------------------------------------
# event streams


def write_events(events: np.ndarray, path) -> str:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_header(EVENTS_MAGIC))
        f.write(struct.pack("<Q", len(events)))
        f.write(np.ascontiguousarray(events).tobytes())
    return sha256_file(path)


def read_events(path) -> np.ndarray:
    from . import pipeline

    path = Path(path)
    with open(path, "rb") as f:
        _check_header(f, EVENTS_MAGIC, path)
        (count,) = struct.unpack("<Q", f.read(8))
        buf = f.read(count * pipeline.EVENT_DTYPE.itemsize)
        if len(buf) < count * pipeline.EVENT_DTYPE.itemsize:
            raise FormatError(f"{path}: truncated event records")
        return np.frombuffer(buf, dtype=pipeline.EVENT_DTYPE).copy()


# ---------------------------------------------------------------------------
# CSV reports and manifests


def write_rows_csv(rows: list[dict], path, columns: list[str] | None = None):
    if not rows:
        raise ValueError("no rows to write")
    cols = columns or list(rows[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for row in rows:
            w.writerow({k: _csv_cell(row.get(k)) for k in cols})


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_rows_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_manifest(path, payload: dict):
    """Effective-config echo for provenance; deterministic bytes."""
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def verify_chain(*, weights_path=None, dataset_hash=None, quantized_path=None) -> list[str]:
    """Cross-check embedded input hashes along the artifact chain.

    Returns a list of human-readable problems (empty when consistent).
    """
    problems = []
    if weights_path is not None:
        w = read_weights(weights_path)
        if dataset_hash and w.dataset_hash and w.dataset_hash != dataset_hash:
            problems.append(
                f"weights {weights_path} were trained on dataset {w.dataset_hash[:12]}, "
                f"not {dataset_hash[:12]}")
        if quantized_path is not None:
            qw = read_quantized(quantized_path)
            actual = quant.float_weights_hash(w)
            if qw.float_hash and qw.float_hash != actual:
                problems.append(
                    f"quantized weights {quantized_path} derive from float weights "
                    f"{qw.float_hash[:12]}, not {actual[:12]}")
    return problems
