"""Data ingestion and synthesis.

Readers for IDX image files and pre-tokenized bag-of-words counts, the
intensity-scaling corruption, and a generator that samples data from the
model's own generative process for recovery tests. Every transform
appends to a provenance chain so a dataset's origin is recoverable from
its header.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace

import numpy as np

from bbsc import likelihood, nn

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class DenseDataset:
    data: np.ndarray  # (N, D) float64
    labels: np.ndarray | None = None
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError("dense data must be an (N, D) matrix")
        if not np.isfinite(self.data).all():
            raise ValueError("dense data contains non-finite entries")
        if self.labels is not None and len(self.labels) != self.data.shape[0]:
            raise ValueError("label count does not match data rows")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class CountDataset:
    counts: np.ndarray  # (N, W) int64
    vocabulary: list[str]
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        if self.counts.ndim != 2:
            raise ValueError("counts must be an (N, W) matrix")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")
        if self.counts.shape[1] != len(self.vocabulary):
            raise ValueError("vocabulary length does not match count columns")
        if self.counts.shape[0] and np.any(self.counts.sum(axis=1) == 0):
            raise ValueError("retained documents must have positive total count")

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def n_words(self) -> int:
        return self.counts.shape[1]


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(images_path: str, labels_path: str | None = None) -> DenseDataset:
    """Parse big-endian IDX image (and optional label) files; pixels scaled to [0,1]."""
    with _open_maybe_gzip(images_path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError(f"truncated IDX header in {images_path}")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"bad IDX image magic 0x{magic:08x} in {images_path}")
        raw = fh.read(n * rows * cols)
        if len(raw) != n * rows * cols:
            raise ValueError(f"truncated IDX payload in {images_path}")
    data = np.frombuffer(raw, dtype=np.uint8).astype(np.float64).reshape(n, rows * cols)
    data /= 255.0

    labels = None
    if labels_path is not None:
        with _open_maybe_gzip(labels_path) as fh:
            header = fh.read(8)
            if len(header) < 8:
                raise ValueError(f"truncated IDX header in {labels_path}")
            magic, n_labels = struct.unpack(">II", header)
            if magic != IDX_LABELS_MAGIC:
                raise ValueError(f"bad IDX label magic 0x{magic:08x} in {labels_path}")
            raw = fh.read(n_labels)
            if len(raw) != n_labels:
                raise ValueError(f"truncated IDX payload in {labels_path}")
        if n_labels != n:
            raise ValueError(f"image/label count mismatch: {n} images, {n_labels} labels")
        labels = np.frombuffer(raw, dtype=np.uint8).copy()

    prov = (f"idx:{images_path}",) if labels_path is None else \
        (f"idx:{images_path}", f"idx-labels:{labels_path}")
    return DenseDataset(data=data, labels=labels, provenance=prov)


def binarize(ds: DenseDataset, threshold: float = 0.5) -> DenseDataset:
    """Threshold to {0,1}: entries >= threshold become 1. Idempotent."""
    data = (ds.data >= threshold).astype(np.float64)
    return replace(ds, data=data,
                   provenance=ds.provenance + (f"binarize:threshold={threshold:g}",))


def scale_corrupt(ds: DenseDataset, scale_max: float, seed: int) -> DenseDataset:
    """Per-image multiplicative intensity jitter 1 + u, u ~ U(-scale_max, scale_max)."""
    if not 0.0 <= scale_max < 1.0:
        raise ValueError("scale_max must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    factors = 1.0 + rng.uniform(-scale_max, scale_max, size=ds.n)
    return replace(ds, data=ds.data * factors[:, None],
                   provenance=ds.provenance + (f"scale_corrupt:scale_max={scale_max:g}:seed={seed}",))


def read_bow(counts_path: str, vocab_path: str | None = None) -> CountDataset:
    """Read a pre-tokenized count file: one "doc_id token_id count" triple per line.

    The vocabulary sidecar (one token per line) defaults to counts_path +
    ".vocab". Documents keep their file order of first appearance; zero or
    negative counts and out-of-range token ids are rejected.
    """
    if vocab_path is None:
        vocab_path = counts_path + ".vocab"
    with open(vocab_path, "r", encoding="utf-8") as fh:
        vocabulary = [line.rstrip("\n") for line in fh if line.strip()]
    if not vocabulary:
        raise ValueError(f"empty vocabulary file {vocab_path}")

    docs: dict[int, dict[int, int]] = {}
    order: list[int] = []
    with open(counts_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{counts_path}:{lineno}: expected 'doc token count'")
            doc, tok, cnt = (int(p) for p in parts)
            if not 0 <= tok < len(vocabulary):
                raise ValueError(f"{counts_path}:{lineno}: unknown token id {tok}")
            if cnt <= 0:
                raise ValueError(f"{counts_path}:{lineno}: count must be positive")
            if doc not in docs:
                docs[doc] = {}
                order.append(doc)
            docs[doc][tok] = docs[doc].get(tok, 0) + cnt

    counts = np.zeros((len(order), len(vocabulary)), dtype=np.int64)
    for i, doc in enumerate(order):
        for tok, cnt in docs[doc].items():
            counts[i, tok] = cnt
    return CountDataset(counts=counts, vocabulary=vocabulary,
                        provenance=(f"bow:{counts_path}",))


@dataclass(frozen=True)
class SyntheticSpec:
    likelihood: str  # "gauss" | "poiss" | "bern"
    n: int
    k: int
    d: int = 0  # data dim (gauss/bern)
    w: int = 0  # vocabulary size (poiss)
    t: int = 0  # topic count (poiss)
    hidden: tuple[int, ...] = (16,)
    alpha: float = 1.0
    gamma_mass: float = 0.0  # 0 -> K/5
    sigma2: float = 0.1
    c: float = 1.0
    a: float = 1.0
    b: float = 1.0
    doc_scale: float = 50.0  # mean total count multiplier for poiss draws
    weight_scale: float = 3.5  # spreads decoder outputs so codes are identifiable
    seed: int = 0

    def __post_init__(self):
        if self.likelihood not in ("gauss", "poiss", "bern"):
            raise ValueError(f"unknown likelihood '{self.likelihood}'")
        if self.n < 1 or self.k < 1:
            raise ValueError("need n >= 1 and k >= 1")
        gamma = self.gamma_mass if self.gamma_mass > 0.0 else self.k / 5.0
        if gamma >= self.k:
            raise ValueError("gamma mass must be < K")
        if self.likelihood in ("gauss", "bern") and self.d < 1:
            raise ValueError("dense variants need d >= 1")
        if self.likelihood == "poiss" and (self.w < 1 or self.t < 1):
            raise ValueError("poisson variant needs w >= 1 and t >= 1")
        if self.likelihood == "gauss" and (self.c <= 0.0 or self.sigma2 <= 0.0):
            raise ValueError("gauss variant needs c > 0 and sigma2 > 0")

    @property
    def gamma(self) -> float:
        return self.gamma_mass if self.gamma_mass > 0.0 else self.k / 5.0


@dataclass(frozen=True)
class SyntheticResult:
    dataset: DenseDataset | CountDataset
    codes: np.ndarray  # (N, K) ground truth
    decoder: nn.DecoderNetwork
    pis: np.ndarray
    scales: np.ndarray | None
    beta: np.ndarray | None = None


def generate_synthetic(spec: SyntheticSpec) -> SyntheticResult:
    """Sample activation rates, codes, scales, and data from the generative model."""
    rng = np.random.default_rng(spec.seed)
    pis = rng.beta(spec.alpha * spec.gamma / spec.k,
                   spec.alpha * (1.0 - spec.gamma / spec.k), size=spec.k)
    codes = (rng.random((spec.n, spec.k)) < pis).astype(np.float64)

    prov_head = (f"synthetic:{spec.likelihood}:seed={spec.seed}",)

    def _true_net(out_dim, final):
        # a plain Glorot draw keeps every sigmoid output near 0.5, making all
        # codes decode alike; widening the weights separates the patterns
        net = nn.init_network(spec.k, spec.hidden, out_dim, final, rng)
        for layer in net.layers:
            layer.weight *= spec.weight_scale
        return net

    if spec.likelihood == "gauss":
        net = _true_net(spec.d, nn.Activation.SIGMOID)
        scales = rng.normal(0.0, np.sqrt(spec.c), size=spec.n)
        F = net.forward_many(codes)
        data = scales[:, None] * F + rng.normal(0.0, np.sqrt(spec.sigma2), size=(spec.n, spec.d))
        ds = DenseDataset(data=data, provenance=prov_head)
        return SyntheticResult(ds, codes, net, pis, scales)

    if spec.likelihood == "bern":
        net = _true_net(spec.d, nn.Activation.SIGMOID)
        F = net.forward_many(codes)
        data = (rng.random((spec.n, spec.d)) < F).astype(np.float64)
        ds = DenseDataset(data=data, provenance=prov_head)
        return SyntheticResult(ds, codes, net, pis, scales=None)

    net = _true_net(spec.t, nn.Activation.SOFTMAX)
    beta = likelihood.column_softmax(rng.normal(0.0, 1.0, size=(spec.w, spec.t)))
    scales = rng.gamma(spec.a, 1.0 / spec.b, size=spec.n) * spec.doc_scale
    F = net.forward_many(codes)
    rates = scales[:, None] * (F @ beta.T)
    counts = rng.poisson(rates).astype(np.int64)
    # the generative model guarantees nothing about empty documents; resample
    # rows until every document has at least one token
    for _ in range(1000):
        empty = counts.sum(axis=1) == 0
        if not empty.any():
            break
        counts[empty] = rng.poisson(rates[empty])
    else:
        raise RuntimeError("could not draw nonempty documents; raise doc_scale")
    vocab = [f"w{i}" for i in range(spec.w)]
    ds = CountDataset(counts=counts, vocabulary=vocab, provenance=prov_head)
    return SyntheticResult(ds, codes, net, pis, scales, beta=beta)


# ---------------------------------------------------------------------------
# simple text export/import with provenance headers

def save_dense_csv(ds: DenseDataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in ds.provenance:
            fh.write(f"# provenance: {entry}\n")
        for i, row in enumerate(ds.data):
            cells = ",".join(f"{v:.17g}" for v in row)
            if ds.labels is not None:
                cells += f",{int(ds.labels[i])}"
            fh.write(cells + "\n")


def load_dense_csv(path: str, labeled: bool = False) -> DenseDataset:
    prov: list[str] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# provenance:"):
                    prov.append(line.split(":", 1)[1].strip())
                continue
            rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise ValueError(f"no data rows in {path}")
    arr = np.asarray(rows, dtype=np.float64)
    labels = None
    if labeled:
        labels = arr[:, -1].astype(np.int64)
        arr = arr[:, :-1]
    return DenseDataset(data=arr, labels=labels,
                        provenance=tuple(prov) or (f"csv:{path}",))


def save_bow(ds: CountDataset, counts_path: str, vocab_path: str | None = None) -> None:
    if vocab_path is None:
        vocab_path = counts_path + ".vocab"
    with open(vocab_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(ds.vocabulary) + "\n")
    with open(counts_path, "w", encoding="utf-8") as fh:
        for entry in ds.provenance:
            fh.write(f"# provenance: {entry}\n")
        for i, row in enumerate(ds.counts):
            for tok in np.flatnonzero(row):
                fh.write(f"{i} {tok} {int(row[tok])}\n")


def save_codes_csv(codes: np.ndarray, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.atleast_2d(codes):
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def load_codes_csv(path: str) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                rows.append([int(v) for v in line.split(",")])
    return np.asarray(rows, dtype=np.float64)
