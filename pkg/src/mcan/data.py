"""Dataset files, padded batching and a synthetic conflict generator.

Dataset files hold one JSON record per line::

    {"id": "s0", "label": 1.25, "text": [[...], ...], "visual": [[...]], "audio": [[...]]}

An optional ``meta`` object carries generator ground truth (conflict flags).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoders import ModalitySample

MODALITIES = ("text", "visual", "audio")


class DatasetError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_samples: int = 500
    len_text: tuple[int, int] = (3, 6)
    len_visual: tuple[int, int] = (2, 5)
    len_audio: tuple[int, int] = (2, 5)
    d_text: int = 32
    d_visual: int = 12
    d_audio: int = 10
    conflict_prob: float = 0.3
    bimodal_conflict_prob: float = 0.2
    noise_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self):
        for name in ("len_text", "len_visual", "len_audio"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise DatasetError(f"{name} must satisfy 1 <= lo <= hi, got {(lo, hi)}")
            setattr(self, name, (int(lo), int(hi)))
        for name in ("conflict_prob", "bimodal_conflict_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise DatasetError(f"{name} must lie in [0, 1]")
        if self.n_samples < 0 or min(self.d_text, self.d_visual, self.d_audio) < 1:
            raise DatasetError("n_samples must be >= 0 and widths >= 1")
        if self.noise_sigma < 0:
            raise DatasetError("noise_sigma must be >= 0")


def modality_codes(cfg: SynthConfig) -> dict[str, np.ndarray]:
    """Fixed random linear code per modality; a row encodes sentiment s as s * code."""
    rng = np.random.default_rng([cfg.seed, 1])
    codes = {}
    for m, width in zip(MODALITIES, (cfg.d_text, cfg.d_visual, cfg.d_audio)):
        c = rng.normal(size=width)
        codes[m] = c / np.linalg.norm(c)
    return codes


def decode_sentiment(seq: np.ndarray, code: np.ndarray) -> float:
    """Least-squares read-out of the sentiment a modality sequence encodes."""
    return float(np.mean(seq @ code) / (code @ code))


def generate_synthetic(cfg: SynthConfig) -> list[ModalitySample]:
    """Samples whose modalities agree on a latent sentiment except where conflicts are injected.

    * unimodal conflict (prob ``conflict_prob``): one modality, chosen
      uniformly, encodes -s;
    * bimodal conflict (prob ``bimodal_conflict_prob``, independent): one of
      audio/visual is re-encoded so that the mean sentiment of its text pair
      is the negation of the other text pair's mean.

    The label is always the latent s.
    """
    codes = modality_codes(cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    lengths = {"text": cfg.len_text, "visual": cfg.len_visual, "audio": cfg.len_audio}
    samples = []
    for i in range(cfg.n_samples):
        s = float(rng.uniform(-3.0, 3.0))
        enc = {m: s for m in MODALITIES}
        uni = rng.random() < cfg.conflict_prob
        uni_mod = MODALITIES[rng.integers(3)]
        bi = rng.random() < cfg.bimodal_conflict_prob
        bi_mod = ("visual", "audio")[rng.integers(2)]
        if uni:
            enc[uni_mod] = -s
        if bi:
            other = "audio" if bi_mod == "visual" else "visual"
            # (t + x) / 2 == -(t + y) / 2
            enc[bi_mod] = -(2.0 * enc["text"] + enc[other])
        seqs = {}
        for m in MODALITIES:
            lo, hi = lengths[m]
            n = int(rng.integers(lo, hi + 1))
            noise = rng.normal(size=(n, len(codes[m]))) * cfg.noise_sigma
            seqs[m] = enc[m] * np.tile(codes[m], (n, 1)) + noise
        meta = {
            "unimodal_conflict": uni_mod if uni else None,
            "bimodal_conflict": bi_mod if bi else None,
            "encoded": enc,
        }
        samples.append(ModalitySample(f"synth-{i:06d}", s, seqs["text"], seqs["visual"],
                                      seqs["audio"], meta))
    return samples


def sample_to_record(s: ModalitySample) -> dict:
    rec = {"id": s.id, "label": s.label, "text": s.text.tolist(),
           "visual": s.visual.tolist(), "audio": s.audio.tolist()}
    if s.meta:
        rec["meta"] = s.meta
    return rec


def write_dataset(samples: Iterable[ModalitySample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s), separators=(",", ":")) + "\n")


def load_dataset(path: str | Path) -> list[ModalitySample]:
    """Parse and validate a dataset file; widths are checked against the first record."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    samples: list[ModalitySample] = []
    widths: dict[str, int] | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc.msg})") from exc
            try:
                missing = {"id", "label", *MODALITIES} - set(rec)
                if missing:
                    raise DatasetError(f"missing fields {sorted(missing)}")
                label = float(rec["label"])
                if not np.isfinite(label) or not -3.0 <= label <= 3.0:
                    raise DatasetError(f"label {label} outside [-3, 3]")
                mats = {}
                for m in MODALITIES:
                    arr = np.asarray(rec[m], dtype=np.float64)
                    if arr.ndim != 2 or arr.shape[0] < 1:
                        raise DatasetError(f"{m} must be a non-empty matrix")
                    if not np.all(np.isfinite(arr)):
                        raise DatasetError(f"{m} contains non-finite values")
                    mats[m] = arr
                shape = {m: mats[m].shape[1] for m in MODALITIES}
                if widths is None:
                    widths = shape
                elif shape != widths:
                    raise DatasetError(f"widths {shape} differ from first record {widths}")
            except (DatasetError, ValueError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            samples.append(ModalitySample(str(rec["id"]), label, mats["text"], mats["visual"],
                                          mats["audio"], rec.get("meta") or {}))
    return samples


def raw_widths(samples: Sequence[ModalitySample]) -> dict[str, int]:
    s = samples[0]
    return {"text": s.text.shape[1], "visual": s.visual.shape[1], "audio": s.audio.shape[1]}


@dataclass
class Batch:
    ids: list[str]
    labels: np.ndarray
    text: np.ndarray
    visual: np.ndarray
    audio: np.ndarray
    mask_t: np.ndarray
    mask_v: np.ndarray
    mask_a: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def _pad(seqs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    n = max(s.shape[0] for s in seqs)
    out = np.zeros((len(seqs), n, seqs[0].shape[1]))
    mask = np.zeros((len(seqs), n), bool)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
        mask[i, :len(s)] = True
    return out, mask


def collate(samples: Sequence[ModalitySample]) -> Batch:
    """Right-pad every modality to the batch maximum length."""
    text, mt = _pad([s.text for s in samples])
    visual, mv = _pad([s.visual for s in samples])
    audio, ma = _pad([s.audio for s in samples])
    return Batch([s.id for s in samples], np.array([s.label for s in samples], dtype=np.float64),
                 text, visual, audio, mt, mv, ma)


def make_batches(samples: Sequence[ModalitySample], batch_size: int, seed: int | None = None,
                 shuffle: bool = True) -> list[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(samples))
    if shuffle and seed is not None:
        order = np.random.default_rng(seed).permutation(len(samples))
    return [collate([samples[j] for j in order[i:i + batch_size]])
            for i in range(0, len(samples), batch_size)]


def split_dataset(samples: Sequence[ModalitySample], val_fraction: float, test_fraction: float,
                  seed: int) -> dict[str, list[ModalitySample]]:
    """Deterministic train/val/test partition."""
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise DatasetError("split fractions must be >= 0 and sum below 1")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_test = int(round(test_fraction * len(samples)))
    n_val = int(round(val_fraction * len(samples)))
    test = [samples[i] for i in order[:n_test]]
    val = [samples[i] for i in order[n_test:n_test + n_val]]
    train = [samples[i] for i in order[n_test + n_val:]]
    return {"train": train, "val": val, "test": test}


def synth_config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
