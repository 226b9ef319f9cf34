"""File formats and configuration.

Three binary formats, all little-endian with 64-bit floats and
length-prefixed UTF-8 strings, each with a 4-byte magic and a u16
version so future revisions fail loudly instead of misparsing:

  CFAN  feature files: per-instance (subject, template, map, embedding)
  CFNM  model files: quality-head parameters plus frozen BN statistics
  CFNR  representation files: one fused D-vector per template

Configs are plain ``key = value`` text (diffable); reports are
line-oriented ``metric=... target=... value=... threshold=...`` text.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .aggregation import QualityHead
from .core import BatchNormParams, LinearParams
from .evaluation import EvalReport
from .synthetic import NoiseModelConfig, SyntheticDataset
from .training import TrainConfig

FORMAT_VERSION = 1
_MODE_CODES = {"average": 0, "instance": 1, "cfan": 2}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


@dataclass
class FeatureRecord:
    subject_id: str
    template_id: str
    feature_map: np.ndarray
    embedding: np.ndarray


@dataclass
class RepRecord:
    subject_id: str
    template_id: str
    n_instances: int
    vector: np.ndarray


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.buf):
            raise ValueError(f"{self.path}: truncated file")
        vals = struct.unpack_from(fmt, self.buf, self.off)
        self.off += size
        return vals

    def take_string(self) -> str:
        (n,) = self.take("<I")
        if self.off + n > len(self.buf):
            raise ValueError(f"{self.path}: truncated file")
        s = self.buf[self.off : self.off + n].decode("utf-8")
        self.off += n
        return s

    def take_floats(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.off + size > len(self.buf):
            raise ValueError(f"{self.path}: truncated file")
        arr = np.frombuffer(self.buf, dtype="<f8", count=count, offset=self.off).copy()
        self.off += size
        if not np.isfinite(arr).all():
            raise ValueError(f"{self.path}: non-finite values")
        return arr

    def done(self):
        if self.off != len(self.buf):
            raise ValueError(f"{self.path}: {len(self.buf) - self.off} trailing bytes")


def _check_header(r: _Reader, magic: bytes, kind: str):
    got, version = r.take("<4sH")
    if got != magic:
        raise ValueError(f"{r.path}: not a {kind} file (magic {got!r})")
    if version != FORMAT_VERSION:
        raise ValueError(
            f"{r.path}: unsupported {kind} format version {version} (this build reads {FORMAT_VERSION})"
        )


def _pack_string(s: str) -> bytes:
    data = s.encode("utf-8")
    return struct.pack("<I", len(data)) + data


def _pack_floats(arr: np.ndarray) -> bytes:
    if not np.isfinite(arr).all():
        raise ValueError("refusing to write non-finite values")
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def write_feature_file(path, map_dim: int, dim: int, records) -> int:
    records = list(records)
    parts = [struct.pack("<4sHIIQ", b"CFAN", FORMAT_VERSION, map_dim, dim, len(records))]
    for r in records:
        if r.feature_map.shape != (map_dim,) or r.embedding.shape != (dim,):
            raise ValueError(f"record for {r.subject_id}/{r.template_id} has wrong dimensions")
        parts.append(_pack_string(r.subject_id))
        parts.append(_pack_string(r.template_id))
        parts.append(_pack_floats(r.feature_map))
        parts.append(_pack_floats(r.embedding))
    with open(path, "wb") as f:
        f.write(b"".join(parts))
    return len(records)


def read_feature_file(path):
    with open(path, "rb") as f:
        r = _Reader(f.read(), str(path))
    _check_header(r, b"CFAN", "feature")
    map_dim, dim, count = r.take("<IIQ")
    records = []
    for _ in range(count):
        sid = r.take_string()
        tid = r.take_string()
        fmap = r.take_floats(map_dim)
        emb = r.take_floats(dim)
        records.append(FeatureRecord(sid, tid, fmap, emb))
    r.done()
    return map_dim, dim, records


def save_model(path, head: QualityHead) -> None:
    m = head.map_dim
    out = head.out_dim
    parts = [
        struct.pack(
            "<4sHBIId",
            b"CFNM",
            FORMAT_VERSION,
            _MODE_CODES[head.mode],
            m,
            out,
            head.bn.eps,
        ),
        _pack_floats(head.bn.gamma),
        _pack_floats(head.bn.beta),
        _pack_floats(head.bn.running_mean),
        _pack_floats(head.bn.running_var),
        _pack_floats(head.fc.weight),
        _pack_floats(head.fc.bias),
    ]
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_model(path) -> QualityHead:
    with open(path, "rb") as f:
        r = _Reader(f.read(), str(path))
    _check_header(r, b"CFNM", "model")
    mode_code, m, out, eps = r.take("<BIId")
    if mode_code not in (_MODE_CODES["instance"], _MODE_CODES["cfan"]):
        raise ValueError(f"{path}: invalid head mode code {mode_code}")
    gamma = r.take_floats(m)
    beta = r.take_floats(m)
    rmean = r.take_floats(m)
    rvar = r.take_floats(m)
    weight = r.take_floats(m * out).reshape(m, out)
    bias = r.take_floats(out)
    r.done()
    return QualityHead(
        bn=BatchNormParams(gamma, beta, eps, rmean, rvar),
        fc=LinearParams(weight, bias),
        mode=_MODE_NAMES[mode_code],
    )


def write_reps_file(path, dim: int, mode: str, records) -> int:
    records = list(records)
    parts = [
        struct.pack("<4sHBIQ", b"CFNR", FORMAT_VERSION, _MODE_CODES[mode], dim, len(records))
    ]
    for r in records:
        if r.vector.shape != (dim,):
            raise ValueError(f"representation for {r.template_id} has wrong dimension")
        parts.append(_pack_string(r.subject_id))
        parts.append(_pack_string(r.template_id))
        parts.append(struct.pack("<I", r.n_instances))
        parts.append(_pack_floats(r.vector))
    with open(path, "wb") as f:
        f.write(b"".join(parts))
    return len(records)


def read_reps_file(path):
    with open(path, "rb") as f:
        r = _Reader(f.read(), str(path))
    _check_header(r, b"CFNR", "representation")
    mode_code, dim, count = r.take("<BIQ")
    if mode_code not in _MODE_NAMES:
        raise ValueError(f"{path}: invalid mode code {mode_code}")
    records = []
    for _ in range(count):
        sid = r.take_string()
        tid = r.take_string()
        (n,) = r.take("<I")
        vec = r.take_floats(dim)
        records.append(RepRecord(sid, tid, n, vec))
    r.done()
    return dim, _MODE_NAMES[mode_code], records


def dataset_records(ds: SyntheticDataset, template_size: int):
    """Flatten a synthetic dataset into feature records.

    Each subject's instances are grouped into consecutive templates of
    ``template_size``; a remainder becomes a final smaller template. The
    template id is ``<subject>/t<k>``.
    """
    if template_size < 1:
        raise ValueError("template_size must be >= 1")
    for subj in ds.subjects:
        for i in range(subj.embeddings.shape[0]):
            yield FeatureRecord(
                subj.subject_id,
                f"{subj.subject_id}/t{i // template_size}",
                subj.feature_maps[i],
                subj.embeddings[i],
            )


@dataclass
class LoadedSubject:
    subject_id: str
    feature_maps: np.ndarray
    embeddings: np.ndarray


@dataclass
class LoadedDataset:
    """Feature-file contents grouped for training (no ground truth).

    ``config`` is attached only when the caller knows the generator that
    produced the file; noise augmentation needs it to rebuild the mixer.
    """

    subjects: list[LoadedSubject]
    map_dim: int
    dim: int
    config: NoiseModelConfig | None = None


def group_by_subject(map_dim: int, dim: int, records) -> LoadedDataset:
    order: list[str] = []
    maps: dict[str, list] = {}
    embs: dict[str, list] = {}
    for r in records:
        if r.subject_id not in maps:
            order.append(r.subject_id)
            maps[r.subject_id] = []
            embs[r.subject_id] = []
        maps[r.subject_id].append(r.feature_map)
        embs[r.subject_id].append(r.embedding)
    subjects = [
        LoadedSubject(sid, np.stack(maps[sid]), np.stack(embs[sid])) for sid in order
    ]
    return LoadedDataset(subjects, map_dim, dim)


def group_by_template(records):
    """(subject_id, template_id, N x M maps, N x D embeddings) per template,
    in first-appearance order."""
    order: list[str] = []
    bucket: dict[str, list] = {}
    for r in records:
        if r.template_id not in bucket:
            order.append(r.template_id)
            bucket[r.template_id] = []
        bucket[r.template_id].append(r)
    out = []
    for tid in order:
        rs = bucket[tid]
        sids = {r.subject_id for r in rs}
        if len(sids) != 1:
            raise ValueError(f"template {tid!r} spans multiple subjects: {sorted(sids)}")
        out.append(
            (rs[0].subject_id, tid, np.stack([r.feature_map for r in rs]), np.stack([r.embedding for r in rs]))
        )
    return out


@dataclass
class RunConfig:
    noise: NoiseModelConfig = field(default_factory=NoiseModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "cfan"
    template_size: int = 5
    data_path: str | None = None
    model_path: str | None = None
    out_path: str | None = None


_NOISE_KEYS = {
    "n_subjects": int,
    "dim": int,
    "map_dim": int,
    "instances_per_subject": int,
    "sigma_min": float,
    "sigma_max": float,
    "quality_latent_dim": int,
    "seed": int,
}
_TRAIN_KEYS = {
    "alpha": float,
    "lr": float,
    "momentum": float,
    "weight_decay": float,
    "steps": int,
    "subjects_per_batch": int,
    "templates_per_subject": int,
    "images_per_template": int,
    "rng_seed": int,
    "noise_augment": str,
    "l2_normalize": bool,
    "mining": str,
}
_TOP_KEYS = {
    "mode": str,
    "template_size": int,
    "data_path": str,
    "model_path": str,
    "out_path": str,
}


def _convert(key: str, raw: str, typ):
    if typ is bool:
        if raw not in ("true", "false"):
            raise ValueError(f"config key {key}: expected true/false, got {raw!r}")
        return raw == "true"
    try:
        return typ(raw)
    except ValueError:
        raise ValueError(f"config key {key}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines. Unknown and duplicate keys are errors;
    lines starting with ``#`` and blank lines are skipped."""
    seen: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key in seen:
            raise ValueError(f"duplicate config key: {key}")
        for table in (_NOISE_KEYS, _TRAIN_KEYS, _TOP_KEYS):
            if key in table:
                seen[key] = _convert(key, raw, table[key])
                break
        else:
            raise ValueError(f"unknown config key: {key}")
    noise_kwargs = {k: v for k, v in seen.items() if k in _NOISE_KEYS}
    train_kwargs = {k: v for k, v in seen.items() if k in _TRAIN_KEYS}
    top_kwargs = {k: v for k, v in seen.items() if k in _TOP_KEYS}
    cfg = RunConfig(
        noise=NoiseModelConfig(**noise_kwargs),
        train=TrainConfig(**train_kwargs),
        **top_kwargs,
    )
    if cfg.mode not in ("average", "instance", "cfan"):
        raise ValueError(f"config key mode: must be average/instance/cfan, got {cfg.mode!r}")
    if cfg.template_size < 1:
        raise ValueError("config key template_size: must be >= 1")
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def format_config(cfg: RunConfig) -> str:
    lines = []
    for obj, keys in ((cfg.noise, _NOISE_KEYS), (cfg.train, _TRAIN_KEYS)):
        for k in keys:
            v = getattr(obj, k)
            lines.append(f"{k} = {_format_value(v)}")
    for k in _TOP_KEYS:
        v = getattr(cfg, k)
        if v is not None:
            lines.append(f"{k} = {_format_value(v)}")
    return "\n".join(lines) + "\n"


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def format_report(report: EvalReport) -> str:
    """One metric per line; floats printed with full precision so reruns
    are byte-comparable."""
    lines = []
    for rank, ir in report.cmc:
        lines.append(f"metric=cmc target={rank} value={_fmt(ir)} threshold=nan")
    for p in report.tpir_fpir:
        lines.append(
            f"metric=tpir_at_fpir target={_fmt(p.target_fpir)} value={_fmt(p.tpir)} "
            f"threshold={_fmt(p.threshold)} achieved_fpir={_fmt(p.achieved_fpir)} "
            f"flagged={'1' if p.flagged else '0'}"
        )
    for t in report.tar_far:
        lines.append(
            f"metric=tar_at_far target={_fmt(t.target_far)} value={_fmt(t.tar)} "
            f"threshold={_fmt(t.threshold)} achieved_far={_fmt(t.achieved_far)}"
        )
    if report.pairs is not None:
        lines.append(
            f"metric=pair_accuracy_mean target=nan value={_fmt(report.pairs.mean_accuracy)} threshold=nan"
        )
        lines.append(
            f"metric=pair_accuracy_std target=nan value={_fmt(report.pairs.std_accuracy)} threshold=nan"
        )
        for i, (a, tau) in enumerate(zip(report.pairs.fold_accuracies, report.pairs.fold_thresholds)):
            lines.append(
                f"metric=pair_fold target={i} value={_fmt(a)} threshold={_fmt(tau)}"
            )
    return "\n".join(lines) + "\n"


def write_training_log(path, log) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in log:
            f.write(f"step {e.step} loss {_fmt(e.loss)} active_triplets {e.active_triplets}\n")


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
