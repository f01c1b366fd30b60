"""On-disk formats: data container, labels, model container, config text, trace CSV.

Every floating-point payload is 64-bit little-endian IEEE-754, so round trips
are bit-exact and outputs are byte-identical across platforms.
"""

import struct
from dataclasses import dataclass, fields

import numpy as np

from . import model as mdl
from .data import Dataset, SpeakerPartition
from .posterior import QAlpha, QVtilde, QWGammaDiag, QWGammaIso, QWWishart

__all__ = [
    "FormatError",
    "MAGIC_DATA",
    "MAGIC_MODEL",
    "write_data_file",
    "read_data_file",
    "write_labels_file",
    "read_labels_file",
    "load_dataset",
    "SavedModel",
    "write_model_file",
    "read_model_file",
    "parse_config",
    "write_trace_csv",
]

MAGIC_DATA = b"BSPLDA-DATA\x00"
MAGIC_MODEL = b"BSPLDA-MODEL\x00"
FORMAT_VERSION = 1

_ARM_TAGS = {QWWishart: 1, QWGammaDiag: 2, QWGammaIso: 3}


class FormatError(ValueError):
    """A file does not conform to its declared container format."""


def _write_f64(f, arr):
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64(f, shape):
    count = int(np.prod(shape)) if shape else 1
    buf = f.read(8 * count)
    if len(buf) != 8 * count:
        raise FormatError("truncated file")
    arr = np.frombuffer(buf, dtype="<f8", count=count).copy()
    return arr.reshape(shape) if shape else float(arr[0])


def _write_scalar(f, fmt, value):
    f.write(struct.pack(fmt, value))


def _read_scalar(f, fmt):
    size = struct.calcsize(fmt)
    buf = f.read(size)
    if len(buf) != size:
        raise FormatError("truncated file")
    return struct.unpack(fmt, buf)[0]


def write_data_file(path, vectors):
    vectors = np.ascontiguousarray(vectors, dtype="<f8")
    n, d = vectors.shape
    with open(path, "wb") as f:
        f.write(MAGIC_DATA)
        _write_scalar(f, "<H", FORMAT_VERSION)
        _write_scalar(f, "<I", d)
        _write_scalar(f, "<Q", n)
        f.write(vectors.tobytes())


def read_data_file(path):
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC_DATA))
        if magic != MAGIC_DATA:
            raise FormatError(f"{path}: bad data magic")
        version = _read_scalar(f, "<H")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported data format version {version}")
        d = _read_scalar(f, "<I")
        n = _read_scalar(f, "<Q")
        vectors = _read_f64(f, (n, d))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return vectors


def write_labels_file(path, ids, speaker_names):
    if len(ids) != len(speaker_names):
        raise ValueError("ids and speaker names differ in length")
    with open(path, "w", encoding="utf-8") as f:
        for rec, spk in zip(ids, speaker_names):
            f.write(f"{rec} {spk}\n")


def read_labels_file(path):
    ids = []
    speakers = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected '<record_id> <speaker_id>'")
            ids.append(parts[0])
            speakers.append(parts[1])
    return ids, speakers


def load_dataset(data_path, labels_path):
    """Dataset plus partition; speakers are indexed by first appearance order."""
    vectors = read_data_file(data_path)
    ids, speakers = read_labels_file(labels_path)
    if len(ids) != vectors.shape[0]:
        raise FormatError(
            f"{labels_path}: {len(ids)} label lines for {vectors.shape[0]} data rows"
        )
    index = {}
    assignment = np.empty(len(speakers), dtype=int)
    for row, name in enumerate(speakers):
        assignment[row] = index.setdefault(name, len(index))
    dataset = Dataset(vectors=vectors, ids=tuple(ids))
    partition = SpeakerPartition(assignment=assignment, n_speakers=len(index))
    return dataset, partition


@dataclass(frozen=True)
class SavedModel:
    """Everything a model file carries: point estimate, posterior blocks, prior echo."""

    variant: str
    mu: np.ndarray
    V: np.ndarray
    W: np.ndarray
    qv: QVtilde
    qw: object
    prior: mdl.PriorConfig
    elbo: float
    qalpha: QAlpha = None
    rotation: np.ndarray = None

    @property
    def dim(self):
        return self.mu.shape[0]

    @property
    def rank(self):
        return self.V.shape[1]


def _write_optional_array(f, arr, shape):
    if arr is None:
        _write_scalar(f, "<B", 0)
    else:
        _write_scalar(f, "<B", 1)
        _write_f64(f, np.asarray(arr, dtype=float).reshape(shape))


def _read_optional_array(f, shape):
    if _read_scalar(f, "<B"):
        return _read_f64(f, shape)
    return None


def write_model_file(path, saved):
    d, ny = saved.dim, saved.rank
    k = ny + 1
    prior = saved.prior
    with open(path, "wb") as f:
        f.write(MAGIC_MODEL)
        _write_scalar(f, "<H", FORMAT_VERSION)
        _write_scalar(f, "<B", mdl.VARIANTS.index(saved.variant) + 1)
        _write_scalar(f, "<I", d)
        _write_scalar(f, "<I", ny)
        _write_scalar(f, "<d", float(saved.elbo))
        _write_f64(f, saved.mu)
        _write_f64(f, saved.V)
        _write_f64(f, saved.W)
        _write_f64(f, saved.qv.mean)
        _write_f64(f, saved.qv.prec)
        arm = _ARM_TAGS[type(saved.qw)]
        _write_scalar(f, "<B", arm)
        if arm == 1:
            _write_scalar(f, "<d", float(saved.qw.nu))
            _write_f64(f, saved.qw.psi)
        elif arm == 2:
            _write_scalar(f, "<d", float(saved.qw.a))
            _write_f64(f, saved.qw.b)
        else:
            _write_scalar(f, "<d", float(saved.qw.a))
            _write_scalar(f, "<d", float(saved.qw.b))
        if saved.qalpha is None:
            _write_scalar(f, "<B", 0)
        else:
            _write_scalar(f, "<B", 1)
            _write_scalar(f, "<d", float(saved.qalpha.a))
            _write_f64(f, saved.qalpha.b)
        _write_optional_array(f, prior.mu0, (d,))
        _write_optional_array(f, prior.beta, (d,))
        if prior.a_alpha is None:
            _write_scalar(f, "<B", 0)
        else:
            _write_scalar(f, "<B", 1)
            _write_scalar(f, "<d", float(prior.a_alpha))
            _write_scalar(f, "<d", float(prior.b_alpha))
        if prior.a_w is None:
            _write_scalar(f, "<B", 0)
        else:
            _write_scalar(f, "<B", 1)
            _write_scalar(f, "<d", float(prior.a_w))
        if prior.b_w is None:
            _write_scalar(f, "<B", 0)
        else:
            b_w = np.atleast_1d(np.asarray(prior.b_w, dtype=float))
            _write_scalar(f, "<B", 1)
            _write_scalar(f, "<I", b_w.size)
            _write_f64(f, b_w)
        if prior.psi0 is None:
            _write_scalar(f, "<B", 0)
        else:
            _write_scalar(f, "<B", 1)
            _write_f64(f, prior.psi0)
            _write_scalar(f, "<d", float(prior.nu_d))
        if prior.v_row_means is None:
            _write_scalar(f, "<B", 0)
        else:
            _write_scalar(f, "<B", 1)
            _write_f64(f, prior.v_row_means)
            _write_f64(f, prior.v_row_precisions)
        _write_optional_array(f, saved.rotation, (d, d))


def read_model_file(path):
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC_MODEL))
        if magic != MAGIC_MODEL:
            raise FormatError(f"{path}: bad model magic")
        version = _read_scalar(f, "<H")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported model format version {version}")
        variant_idx = _read_scalar(f, "<B")
        if not 1 <= variant_idx <= len(mdl.VARIANTS):
            raise FormatError(f"{path}: unknown variant tag {variant_idx}")
        variant = mdl.VARIANTS[variant_idx - 1]
        d = _read_scalar(f, "<I")
        ny = _read_scalar(f, "<I")
        k = ny + 1
        elbo = _read_scalar(f, "<d")
        mu = _read_f64(f, (d,))
        v = _read_f64(f, (d, ny))
        w = _read_f64(f, (d, d))
        qv = QVtilde(mean=_read_f64(f, (d, k)), prec=_read_f64(f, (d, k, k)))
        arm = _read_scalar(f, "<B")
        if arm == 1:
            nu = _read_scalar(f, "<d")
            qw = QWWishart(psi=_read_f64(f, (d, d)), nu=nu)
        elif arm == 2:
            a = _read_scalar(f, "<d")
            qw = QWGammaDiag(a=a, b=_read_f64(f, (d,)))
        elif arm == 3:
            a = _read_scalar(f, "<d")
            qw = QWGammaIso(a=a, b=_read_scalar(f, "<d"), dim=d)
        else:
            raise FormatError(f"{path}: unknown precision arm tag {arm}")
        qalpha = None
        if _read_scalar(f, "<B"):
            a = _read_scalar(f, "<d")
            qalpha = QAlpha(a=a, b=_read_f64(f, (ny,)))
        mu0 = _read_optional_array(f, (d,))
        beta = _read_optional_array(f, (d,))
        a_alpha = b_alpha = None
        if _read_scalar(f, "<B"):
            a_alpha = _read_scalar(f, "<d")
            b_alpha = _read_scalar(f, "<d")
        a_w = None
        if _read_scalar(f, "<B"):
            a_w = _read_scalar(f, "<d")
        b_w = None
        if _read_scalar(f, "<B"):
            size = _read_scalar(f, "<I")
            b_w = _read_f64(f, (size,))
        psi0 = nu_d = None
        if _read_scalar(f, "<B"):
            psi0 = _read_f64(f, (d, d))
            nu_d = _read_scalar(f, "<d")
        v_row_means = v_row_precisions = None
        if _read_scalar(f, "<B"):
            v_row_means = _read_f64(f, (d, k))
            v_row_precisions = _read_f64(f, (d, k, k))
        rotation = _read_optional_array(f, (d, d))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    prior = mdl.PriorConfig(
        variant=variant,
        mu0=mu0,
        beta=beta,
        a_alpha=a_alpha,
        b_alpha=b_alpha,
        a_w=a_w,
        b_w=b_w,
        psi0=psi0,
        nu_d=nu_d,
        v_row_means=v_row_means,
        v_row_precisions=v_row_precisions,
    )
    return SavedModel(
        variant=variant,
        mu=mu,
        V=v,
        W=w,
        qv=qv,
        qw=qw,
        prior=prior,
        elbo=elbo,
        qalpha=qalpha,
        rotation=rotation,
    )


def parse_config(path):
    """Line-oriented 'key = value' text; '#' starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def write_trace_csv(path, report):
    """Per-iteration totals and term breakdown, 17 significant digits."""
    names = [f.name for f in fields(type(report.final_breakdown))]
    columns = ["iteration", "total"] + [n for n in names if n != "total"]
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(columns) + "\n")
        for i, bd in enumerate(report.breakdown_trace, 1):
            row = [str(i)] + [f"{getattr(bd, c):.17g}" for c in columns[1:]]
            f.write(",".join(row) + "\n")
