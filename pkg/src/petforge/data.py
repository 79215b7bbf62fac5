"""Synthetic speaker corpus: generation, manifests, batch loading and trial lists.

Each speaker is a fixed set of slightly inharmonic partials with a spectral
tilt; every utterance re-draws phases, amplitudes, a small pitch offset and
a syllable-rate envelope, then adds white noise at a fixed SNR.
"""
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import container
from .errors import ConfigError, InputError


@dataclass(frozen=True)
class CorpusConfig:
    sample_rate: int = 4000
    harmonics: int = 6
    snr_db: float = 10.0
    min_seconds: float = 1.0
    max_seconds: float = 3.0
    train_speakers: int = 20
    eval_speakers: int = 10
    utts_per_speaker: int = 30
    f0_range: tuple = (90.0, 280.0)
    pitch_jitter: float = 0.03

    def __post_init__(self):
        if self.min_seconds <= 0 or self.max_seconds < self.min_seconds:
            raise ConfigError("need 0 < min_seconds <= max_seconds")
        if self.harmonics < 1:
            raise ConfigError("harmonics must be positive")
        if self.f0_range[1] * self.harmonics * 1.1 >= self.sample_rate / 2:
            raise ConfigError("highest partial would reach the Nyquist frequency")

    def to_dict(self):
        d = asdict(self)
        d["f0_range"] = list(self.f0_range)
        return d

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown corpus fields: {sorted(extra)}")
        d = dict(d)
        if "f0_range" in d:
            d["f0_range"] = tuple(d["f0_range"])
        return cls(**d)


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    frequencies: tuple
    tilt: float


def speaker_profile(seed, index, cfg=CorpusConfig()):
    rng = np.random.default_rng([seed, index, 0])
    f0 = rng.uniform(*cfg.f0_range)
    k = np.arange(1, cfg.harmonics + 1)
    freqs = f0 * k * (1.0 + rng.uniform(-0.05, 0.05, size=cfg.harmonics))
    tilt = rng.uniform(0.3, 1.5)
    return SpeakerProfile(f"spk{index:03d}", tuple(float(f) for f in freqs), float(tilt))


def synthesize(profile, rng, cfg=CorpusConfig(), seconds=None):
    if seconds is None:
        seconds = rng.uniform(cfg.min_seconds, cfg.max_seconds)
    n = int(round(seconds * cfg.sample_rate))
    t = np.arange(n) / cfg.sample_rate
    shift = 1.0 + rng.normal(0.0, cfg.pitch_jitter)
    freqs = np.asarray(profile.frequencies) * shift
    k = np.arange(1, len(freqs) + 1)
    amps = k ** -profile.tilt * rng.uniform(0.7, 1.3, size=len(freqs))
    phases = rng.uniform(0, 2 * np.pi, size=len(freqs))
    signal = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(axis=0)
    rate = rng.uniform(2.0, 6.0)
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    signal = signal * envelope
    signal /= np.sqrt(np.mean(signal ** 2))
    noise = rng.standard_normal(n) * 10 ** (-cfg.snr_db / 20.0)
    return (signal + noise).astype(np.float32)


def write_waveform(path, wave, sample_rate):
    container.save(path, {f"waveform@{sample_rate}": np.asarray(wave, dtype=np.float32)})


def read_waveform(path):
    tensors = container.load(path)
    if len(tensors) != 1:
        raise InputError(f"{path}: expected a single waveform tensor")
    (name, wave), = tensors.items()
    base, _, rate = name.partition("@")
    if base != "waveform" or not rate.isdigit():
        raise InputError(f"{path}: tensor name {name!r} is not waveform@<rate>")
    return wave, int(rate)


class Manifest:
    """Rows of ``(utt_id, speaker_id, relative path)`` rooted at a directory."""

    def __init__(self, rows, root="."):
        self.rows = [tuple(r) for r in rows]
        self.root = root
        ids = [r[0] for r in self.rows]
        if len(set(ids)) != len(ids):
            raise InputError("manifest has duplicate utterance ids")
        self._index = {r[0]: r for r in self.rows}
        self._cache = {}

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def utt_ids(self):
        return [r[0] for r in self.rows]

    def speakers(self):
        return sorted({r[1] for r in self.rows})

    def speaker_of(self, utt_id):
        return self._index[utt_id][1]

    def label_map(self):
        return {s: i for i, s in enumerate(self.speakers())}

    def path(self, utt_id):
        try:
            rel = self._index[utt_id][2]
        except KeyError:
            raise KeyError(f"utterance {utt_id!r} not in manifest") from None
        return os.path.join(self.root, rel)

    def waveform(self, utt_id):
        if utt_id not in self._cache:
            path = self.path(utt_id)
            if not os.path.exists(path):
                raise FileNotFoundError(f"waveform file missing: {path}")
            self._cache[utt_id] = read_waveform(path)[0]
        return self._cache[utt_id]

    def write(self, path):
        with open(path, "w", newline="") as fh:
            for row in self.rows:
                fh.write("\t".join(row) + "\n")

    @classmethod
    def read(cls, path):
        with open(path, newline="") as fh:
            rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
        bad = [r for r in rows if len(r) != 3]
        if bad:
            raise InputError(f"{path}: malformed manifest row {bad[0]}")
        return cls(rows, root=os.path.dirname(os.path.abspath(path)))


def gen_corpus(num_speakers, utts_per_speaker, seed, out_dir, cfg=None, first_speaker=0,
               manifest_name="manifest.tsv"):
    """Write ``num_speakers * utts_per_speaker`` waveforms plus a manifest; returns the Manifest."""
    cfg = cfg or CorpusConfig()
    if num_speakers < 2 and first_speaker == 0:
        raise InputError("need at least two speakers")
    wav_dir = os.path.join(out_dir, "wav")
    os.makedirs(wav_dir, exist_ok=True)
    rows = []
    for s in range(first_speaker, first_speaker + num_speakers):
        profile = speaker_profile(seed, s, cfg)
        for u in range(utts_per_speaker):
            rng = np.random.default_rng([seed, s, u + 1])
            utt = f"{profile.speaker_id}_u{u:03d}"
            rel = os.path.join("wav", utt + ".petw")
            write_waveform(os.path.join(out_dir, rel), synthesize(profile, rng, cfg), cfg.sample_rate)
            rows.append((utt, profile.speaker_id, rel))
    manifest = Manifest(rows, root=out_dir)
    manifest.write(os.path.join(out_dir, manifest_name))
    return manifest


def load_batch(manifest, ids, crop_len, rng=None, train=True, pad=False):
    """Fixed-length crops and contiguous speaker indices.

    Training crops start at a random offset drawn from ``rng``; eval crops are
    centred. Shorter utterances are zero-padded only when ``pad`` is set.
    """
    labels = manifest.label_map()
    waves = np.zeros((len(ids), crop_len), dtype=np.float32)
    ys = np.empty(len(ids), dtype=np.int64)
    for row, utt in enumerate(ids):
        wave = manifest.waveform(utt)
        n = len(wave)
        if n < crop_len:
            if not pad:
                raise InputError(f"utterance {utt} has {n} samples, fewer than crop length {crop_len}")
            waves[row, :n] = wave
        else:
            start = int(rng.integers(0, n - crop_len + 1)) if train else (n - crop_len) // 2
            waves[row] = wave[start : start + crop_len]
        ys[row] = labels[manifest.speaker_of(utt)]
    return waves, ys


# ---------------------------------------------------------------- trials

@dataclass
class Trial:
    label: int
    enroll: str
    test: str
    score: float = None


class TrialSet:
    def __init__(self, trials):
        self.trials = list(trials)

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    @property
    def labels(self):
        return np.array([t.label for t in self.trials], dtype=np.int64)

    @property
    def scores(self):
        return np.array([t.score for t in self.trials], dtype=np.float64)

    def utterances(self):
        seen = {}
        for t in self.trials:
            seen.setdefault(t.enroll, None)
            seen.setdefault(t.test, None)
        return list(seen)

    def write(self, path):
        with open(path, "w") as fh:
            for t in self.trials:
                fh.write(f"{t.label} {t.enroll} {t.test}\n")

    @classmethod
    def read(cls, path):
        trials = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                parts = line.split()
                if len(parts) != 3 or parts[0] not in ("0", "1"):
                    raise InputError(f"{path}:{lineno}: expected 'label enroll test'")
                trials.append(Trial(int(parts[0]), parts[1], parts[2]))
        return cls(trials)


def make_trials(manifest, num_target, num_nontarget, seed):
    """Sample distinct same-speaker and cross-speaker pairs (unordered, never self-paired)."""
    by_spk = {}
    for utt, spk, _ in manifest:
        by_spk.setdefault(spk, []).append(utt)
    speakers = sorted(by_spk)
    max_target = sum(len(u) * (len(u) - 1) // 2 for u in by_spk.values())
    n = len(manifest)
    max_non = n * (n - 1) // 2 - max_target
    if num_target > max_target or num_nontarget > max_non:
        raise InputError(f"requested {num_target}/{num_nontarget} trials but only "
                         f"{max_target}/{max_non} distinct pairs exist")
    rng = np.random.default_rng([seed, 7])
    seen = set()
    trials = []

    def draw(count, label):
        while count:
            if label:
                spk = speakers[rng.integers(len(speakers))]
                utts = by_spk[spk]
                if len(utts) < 2:
                    continue
                i, j = rng.choice(len(utts), size=2, replace=False)
                a, b = utts[i], utts[j]
            else:
                s1, s2 = rng.choice(len(speakers), size=2, replace=False)
                u1, u2 = by_spk[speakers[s1]], by_spk[speakers[s2]]
                a, b = u1[rng.integers(len(u1))], u2[rng.integers(len(u2))]
            key = (a, b) if a < b else (b, a)
            if key in seen:
                continue
            seen.add(key)
            trials.append(Trial(label, a, b))
            count -= 1

    draw(num_target, 1)
    draw(num_nontarget, 0)
    return TrialSet(trials)


def gen_dataset(out_dir, seed, cfg=None, num_target=2000, num_nontarget=2000):
    """Disjoint train / eval partitions plus an eval trial list."""
    cfg = cfg or CorpusConfig()
    train = gen_corpus(cfg.train_speakers, cfg.utts_per_speaker, seed, out_dir, cfg,
                       first_speaker=0, manifest_name="train.tsv")
    evals = gen_corpus(cfg.eval_speakers, cfg.utts_per_speaker, seed, out_dir, cfg,
                       first_speaker=cfg.train_speakers, manifest_name="eval.tsv")
    trials = make_trials(evals, num_target, num_nontarget, seed)
    trials.write(os.path.join(out_dir, "trials.txt"))
    return train, evals, trials
