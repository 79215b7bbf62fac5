"""Run configuration, pseudo-pretraining, training, evaluation, checkpoints and reports."""
import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autograd as ag
from . import container
from .backbone import BackboneConfig
from .data import CorpusConfig, Manifest, TrialSet, gen_dataset, load_batch
from .errors import ConfigError, ContractError, InputError, NumericError
from .head import HeadConfig
from .metrics import DcfParams, compute_eer, compute_min_dcf, score_trials, write_scores
from .model import SpeakerModel, analytic_trainable, backend_count, count_trainable
from .nn import Init, Linear
from .optim import Adam, Schedule
from .pet import METHODS, MethodSpec

GROUP_A_PREFIXES = ("head.", "pet.prompt.")
STEP_KEY = "__step__"
CONFIG_KEY = "__config__"
ADAM_PREFIX = "__adam__"
LOG_HEADER = ("step", "loss", "lr_groupA", "lr_groupB")


def _section(cls, d, what):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be an object")
    extra = set(d) - {f.name for f in fields(cls)}
    if extra:
        raise ConfigError(f"unknown {what} fields: {sorted(extra)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {what}: {exc}") from None


@dataclass(frozen=True)
class OptimConfig:
    peak_a: float = 5e-4
    floor_a: float = 1.5e-5
    peak_b: float = 1e-4
    floor_b: float = 3e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class ScheduleConfig:
    total_steps: int = 300
    warmup_fraction: float = 0.1
    warmup_steps: int = None  # overrides the fraction when set

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError("schedule.total_steps must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("schedule.warmup_fraction must lie in [0, 1)")

    @property
    def warmup(self):
        if self.warmup_steps is not None:
            return int(self.warmup_steps)
        return int(round(self.warmup_fraction * self.total_steps))


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 200
    lr: float = 5e-4
    batch_size: int = 16
    mask_fraction: float = 0.2
    warmup_fraction: float = 0.1

    def __post_init__(self):
        if not 0 <= self.mask_fraction < 1:
            raise ConfigError("pretrain.mask_fraction must lie in [0, 1)")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("pretrain steps must be >= 0 and batch_size >= 1")


@dataclass(frozen=True)
class DataConfig:
    root: str = "data"
    train_manifest: str = "train.tsv"
    eval_manifest: str = "eval.tsv"
    trials: str = "trials.txt"
    crop_seconds: float = 1.0
    eval_crop_seconds: float = None  # None scores whole utterances
    num_target: int = 2000
    num_nontarget: int = 2000
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    def path(self, name):
        return os.path.join(self.root, getattr(self, name))


@dataclass(frozen=True)
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    method: MethodSpec = field(default_factory=lambda: MethodSpec.desk("unipet"))
    head: HeadConfig = field(default_factory=HeadConfig)
    data: DataConfig = field(default_factory=DataConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    batch_size: int = 32
    seed: int = 0
    out_dir: str = "runs"
    backbone_weights: str = None
    checkpoint: str = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.data.corpus.sample_rate != self.backbone.sample_rate:
            raise ConfigError(f"corpus sample rate {self.data.corpus.sample_rate} differs from "
                              f"backbone sample rate {self.backbone.sample_rate}")

    def with_(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        d = {
            "backbone": self.backbone.to_dict(),
            "method": self.method.to_dict(),
            "head": self.head.to_dict(),
            "optim": asdict(self.optim),
            "schedule": asdict(self.schedule),
            "pretrain": asdict(self.pretrain),
        }
        data = {f.name: getattr(self.data, f.name) for f in fields(DataConfig) if f.name != "corpus"}
        data["corpus"] = self.data.corpus.to_dict()
        d["data"] = data
        for name in ("batch_size", "seed", "out_dir", "backbone_weights", "checkpoint", "checkpoint_every"):
            d[name] = getattr(self, name)
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown run config fields: {sorted(extra)}")
        kw = {k: v for k, v in d.items() if k not in
              ("backbone", "method", "head", "data", "optim", "schedule", "pretrain")}
        try:
            if "backbone" in d:
                kw["backbone"] = BackboneConfig.from_dict(d["backbone"])
            if "method" in d:
                kw["method"] = method_from_config(d["method"])
            if "head" in d:
                kw["head"] = HeadConfig.from_dict(d["head"])
            if "data" in d:
                data = dict(d["data"])
                corpus = CorpusConfig.from_dict(data.pop("corpus", {}))
                kw["data"] = replace(_section(DataConfig, data, "data"), corpus=corpus)
            kw["optim"] = _section(OptimConfig, d.get("optim"), "optim")
            kw["schedule"] = _section(ScheduleConfig, d.get("schedule"), "schedule")
            kw["pretrain"] = _section(PretrainConfig, d.get("pretrain"), "pretrain")
            return cls(**kw)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"bad run config: {exc}") from None

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def method_from_config(m):
    """A method name or object; unset fields come from the ``preset`` (desk by default)."""
    m = {"method": m} if isinstance(m, str) else dict(m)
    preset = m.pop("preset", "desk")
    if preset not in ("desk", "paper") or "method" not in m:
        raise ConfigError("method needs a name and preset 'desk' or 'paper'")
    base = MethodSpec.desk(m["method"]) if preset == "desk" else MethodSpec(m["method"])
    return MethodSpec.from_dict({**base.to_dict(), **m})


def param_group(name):
    return "A" if name.startswith(GROUP_A_PREFIXES) else "B"


def schedules(config):
    o, s = config.optim, config.schedule
    return (Schedule(o.peak_a, o.floor_a, s.warmup, s.total_steps),
            Schedule(o.peak_b, o.floor_b, s.warmup, s.total_steps))


def _write_log(path, rows, append=False):
    new = not (append and os.path.exists(path))
    with open(path, "a" if not new else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(LOG_HEADER)
        for step, loss, ra, rb in rows:
            w.writerow([step, repr(float(loss)), repr(float(ra)), repr(float(rb))])


def read_log(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != LOG_HEADER:
            raise InputError(f"{path}: unexpected log header {header}")
        return [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in reader]


def _check_finite(value, what, step):
    if not np.isfinite(value):
        raise NumericError(f"non-finite {what} ({value}) at step {step}; aborting")


def _crop_len(config, seconds):
    return int(round(seconds * config.backbone.sample_rate))


# ---------------------------------------------------------------- data


def generate_data(config, out_dir=None):
    """Write the synthetic train/eval corpus and the eval trial list."""
    root = out_dir or config.data.root
    d = config.data
    return gen_dataset(root, config.seed, d.corpus, d.num_target, d.num_nontarget)


# ---------------------------------------------------------------- pseudo-pretraining


def pretrain(config, out_dir=None, log=None):
    """Masked-frame regression on the train corpus; writes ``backbone.petw``.

    The conv encoder and its projection stay at their random initialization
    (a trained conv encoder collapses to constant targets); blocks and the
    mask embedding learn to predict masked frames from context.
    """
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    p = config.pretrain
    manifest = Manifest.read(config.data.path("train_manifest"))
    model = SpeakerModel(config.backbone, MethodSpec("backend_only"), config.head,
                         len(manifest.speakers()), seed=config.seed)
    backbone = model.backbone
    predictor = Linear(Init(np.random.default_rng([config.seed, 3]), np.float32),
                       config.backbone.hidden, config.backbone.hidden)
    params = {n: q for n, q in backbone.named_parameters("backbone.")
              if n.startswith(("backbone.block", "backbone.mask_emb"))}
    params.update({f"predictor.{n}": q for n, q in predictor.named_parameters()})
    frozen = {n: q for n, q in backbone.named_parameters("backbone.") if n not in params}
    for q in frozen.values():
        q.trainable = False
    for q in params.values():
        q.trainable = True
    opt = Adam(params, config.optim.beta1, config.optim.beta2, config.optim.eps)
    sched = Schedule(p.lr, 0.0, int(round(p.warmup_fraction * p.steps)), max(p.steps, 1))
    crop = _crop_len(config, config.data.crop_seconds)
    ids = manifest.utt_ids
    rows = []
    for step in range(p.steps):
        rng = np.random.default_rng([config.seed, 2, step])
        batch = [ids[i] for i in rng.integers(0, len(ids), size=p.batch_size)]
        waves, _ = load_batch(manifest, batch, crop, rng)
        loss = backbone.masked_prediction_loss(predictor, waves, rng, p.mask_fraction)
        value = float(loss.data)
        _check_finite(value, "pretraining loss", step)
        grads = ag.backward(loss)
        rate = sched.rate(step)
        opt.step({n: grads.get(n, np.zeros_like(q.data)) for n, q in params.items()}, rate)
        rows.append((step, value, rate, rate))
        if log:
            log(step, value)
    path = os.path.join(out_dir, "backbone.petw")
    backbone.save_weights(path)
    _write_log(os.path.join(out_dir, "pretrain_log.csv"), rows)
    return path, rows


# ---------------------------------------------------------------- training


def build_model(config, num_speakers):
    model = SpeakerModel(config.backbone, config.method, config.head, num_speakers, seed=config.seed)
    if config.backbone_weights:
        model.backbone.load_weights(config.backbone_weights)
    return model


def checkpoint_state(model, opt, step, config):
    state = dict(model.state())
    state.update(opt.state(ADAM_PREFIX))
    # the container holds only floats: the step is exact in f64, config bytes exact in f32
    state[STEP_KEY] = np.array([step], dtype=np.float64)
    # where a run writes is not part of what it computes
    blob = json.dumps(config.with_(out_dir=RunConfig.out_dir).to_dict(), sort_keys=True).encode()
    state[CONFIG_KEY] = np.frombuffer(blob, dtype=np.uint8).astype(np.float32)
    return state


def save_checkpoint(path, model, opt, step, config):
    container.save(path, checkpoint_state(model, opt, step, config))


def checkpoint_config(tensors):
    if CONFIG_KEY not in tensors:
        raise InputError("checkpoint carries no run config")
    return RunConfig.from_dict(json.loads(tensors[CONFIG_KEY].astype(np.uint8).tobytes().decode()))


def _check_compatible(model, tensors):
    for name, (p, _, _) in model.registry.entries.items():
        if name not in tensors:
            raise ContractError(f"checkpoint lacks parameter {name}; was it trained with another method?")
        if tensors[name].shape != p.shape:
            raise ContractError(f"checkpoint {name} has shape {tensors[name].shape}, model expects {p.shape}")


@dataclass
class TrainResult:
    model: SpeakerModel
    log: list
    checkpoint: str
    step: int


def make_optimizer(config, model):
    return Adam(model.registry.trainable(), config.optim.beta1, config.optim.beta2, config.optim.eps)


def run_steps(config, model, opt, batches, start, stop, on_step=None):
    """Core loop over steps ``start..stop-1``; ``batches(step)`` returns ``(waves, labels)``.

    Returns log rows ``(step, loss, lr_groupA, lr_groupB)``.
    """
    sched_a, sched_b = schedules(config)
    groups = {n: param_group(n) for n in opt.params}
    rows = []
    for step in range(start, stop):
        waves, labels = batches(step)
        loss = model.loss(waves, labels)
        value = float(loss.data)
        _check_finite(value, "training loss", step)
        grads = ag.backward(loss)
        ra, rb = sched_a.rate(step), sched_b.rate(step)
        opt.step(grads, {n: ra if g == "A" else rb for n, g in groups.items()})
        rows.append((step, value, ra, rb))
        if on_step:
            on_step(step, value)
    return rows


def manifest_batches(config, manifest):
    """Seeded uniform utterance sampling with random crops; a pure function of the step."""
    crop = _crop_len(config, config.data.crop_seconds)
    ids = manifest.utt_ids

    def batch(step):
        rng = np.random.default_rng([config.seed, 1, step])
        chosen = [ids[i] for i in rng.integers(0, len(ids), size=config.batch_size)]
        return load_batch(manifest, chosen, crop, rng)

    return batch


def train(config, out_dir=None, resume=None, stop_step=None, log=None):
    """Cross-entropy training of the method's trainable set.

    ``resume`` continues from a checkpoint (parameters, Adam moments, step);
    ``stop_step`` halts early without changing the schedule, so a run can be
    split across invocations and still match an uninterrupted one exactly.
    """
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    manifest = Manifest.read(config.data.path("train_manifest"))
    model = build_model(config, len(manifest.speakers()))
    opt = make_optimizer(config, model)
    start = 0
    if resume:
        tensors = container.load(resume)
        _check_compatible(model, tensors)
        model.load_state(tensors)
        opt.load_state(tensors, ADAM_PREFIX)
        start = int(tensors[STEP_KEY][0])
    total = config.schedule.total_steps
    stop = max(start, total if stop_step is None else min(stop_step, total))
    ckpt = os.path.join(out_dir, "checkpoint.petw")
    batches = manifest_batches(config, manifest)
    rows = []
    every = config.checkpoint_every or (stop - start)
    for lo in range(start, stop, max(every, 1)):
        hi = min(lo + every, stop)
        rows += run_steps(config, model, opt, batches, lo, hi, log)
        if hi < stop:
            save_checkpoint(ckpt, model, opt, hi, config)
    _write_log(os.path.join(out_dir, "train_log.csv"), rows, append=bool(resume))
    save_checkpoint(ckpt, model, opt, stop, config)
    return TrainResult(model, rows, ckpt, stop)


def load_model(checkpoint, config=None):
    """Rebuild a SpeakerModel from a checkpoint (config defaults to the embedded one)."""
    tensors = container.load(checkpoint)
    config = config or checkpoint_config(tensors)
    num_speakers = tensors["head.classifier.weight"].shape[1]
    model = SpeakerModel(config.backbone, config.method, config.head, num_speakers, seed=None)
    _check_compatible(model, tensors)
    model.load_state(tensors)
    return model, config


# ---------------------------------------------------------------- evaluation


def extract_embeddings(model, manifest, utt_ids, crop_len=None):
    """Embeddings for ``utt_ids``: whole utterances, or centre crops of ``crop_len``."""
    out = {}
    with ag.no_grad():
        for utt in utt_ids:
            wave = manifest.waveform(utt)
            if crop_len and len(wave) > crop_len:
                start = (len(wave) - crop_len) // 2
                wave = wave[start : start + crop_len]
            out[utt] = model.embed(wave[None, :]).data[0].astype(np.float64)
    return out


@dataclass
class EvalResult:
    eer: float
    min_dcf: float
    scores: TrialSet
    score_path: str = None

    def line(self):
        return f"eer={self.eer:.6f} mindcf={self.min_dcf:.6f}"


def evaluate(config, model=None, checkpoint=None, trials=None, out_dir=None, dcf=DcfParams()):
    if model is None:
        if checkpoint is None:
            raise ConfigError("evaluate needs a model or a checkpoint")
        model, _ = load_model(checkpoint, config)
    manifest = Manifest.read(config.data.path("eval_manifest"))
    trials = trials or TrialSet.read(config.data.path("trials"))
    crop = _crop_len(config, config.data.eval_crop_seconds) if config.data.eval_crop_seconds else None
    emb = extract_embeddings(model, manifest, trials.utterances(), crop)
    scored = score_trials(trials, emb)
    result = EvalResult(compute_eer(scored.scores, scored.labels),
                        compute_min_dcf(scored.scores, scored.labels, dcf), scored)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        result.score_path = os.path.join(out_dir, "scores.txt")
        write_scores(result.score_path, scored)
        write_metrics(os.path.join(out_dir, "metrics.csv"), result)
    return result


def write_metrics(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eer", "mindcf"])
        w.writerow([repr(result.eer), repr(result.min_dcf)])


# ---------------------------------------------------------------- reports


def report_params(methods=None, scale="paper", backbone=None, head=None):
    """Rows ``(method, count, fraction, backend)`` with enumerated and analytic counts cross-checked."""
    if scale == "paper":
        backbone = backbone or BackboneConfig.paper()
        head = head or HeadConfig.paper()
        make = MethodSpec
    elif scale == "desk":
        backbone = backbone or BackboneConfig()
        head = head or HeadConfig()
        make = MethodSpec.desk
    else:
        raise ConfigError(f"scale must be paper or desk, got {scale!r}")
    rows = []
    for m in methods or METHODS:
        spec = make(m) if isinstance(m, str) else m
        count, frac = count_trainable(spec, backbone, head)
        expected = analytic_trainable(spec, backbone)
        if count != expected:
            raise ContractError(f"{spec.method}: enumerated {count} != analytic {expected}")
        rows.append({"method": spec.method, "count": count, "fraction": frac,
                     "backend": backend_count(spec, backbone, head)})
    return rows


def write_param_report(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "count", "fraction", "backend"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "fraction": f"{r['fraction']:.6f}"})


def export_layer_weights(checkpoint, path=None):
    """Softmax-normalized layer weights, one ``(layer, weight)`` row per Transformer layer."""
    tensors = container.load(checkpoint)
    if "head.layer_weights" not in tensors:
        raise InputError(f"{checkpoint}: no layer weights stored")
    z = tensors["head.layer_weights"].astype(np.float64)
    e = np.exp(z - z.max())
    weights = e / e.sum()
    rows = [(i + 1, float(w)) for i, w in enumerate(weights)]
    if path:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "weight"])
            w.writerows((layer, repr(v)) for layer, v in rows)
    return rows
