import numpy as np
import pytest

from petforge.backbone import BackboneConfig
from petforge.data import CorpusConfig
from petforge.head import HeadConfig
from petforge.model import SpeakerModel
from petforge.pet import MethodSpec

# two blocks of width 16; 34 samples give 7 frames
TINY_CONV = ((4, 2, 8), (3, 2, 8))
TINY = BackboneConfig(num_layers=2, hidden=16, heads=2, ffn_dim=32, conv_spec=TINY_CONV)
TINY_HEAD = HeadConfig(backend="tdnn", embed_dim=12, tdnn_channels=8, linear_hidden=8)
TINY_LEN = 34

# filled by test_acceptance, echoed in the terminal summary
ACCEPTANCE = []


def tiny_spec(method, **kw):
    base = dict(bottleneck=4, inter_dim=6, prompt_length=3, lora_rank=2)
    base.update(kw)
    return MethodSpec(method, **base)


def tiny_model(method, seed=0, dtype=np.float64, head=TINY_HEAD, num_speakers=3, **kw):
    return SpeakerModel(TINY, tiny_spec(method, **kw), head, num_speakers, seed=seed, dtype=dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A few-speaker corpus with short utterances, generated once per session."""
    from petforge.data import gen_dataset

    root = tmp_path_factory.mktemp("corpus")
    cfg = CorpusConfig(train_speakers=4, eval_speakers=3, utts_per_speaker=4,
                       min_seconds=0.3, max_seconds=0.5)
    gen_dataset(str(root), seed=5, cfg=cfg, num_target=12, num_nontarget=12)
    return root, cfg


def tiny_run_config(root, corpus, out_dir, method="unipet", steps=6, **kw):
    """A RunConfig on the tiny backbone over ``small_corpus``; 0.05 s crops give 49 frames."""
    from petforge.harness import DataConfig, PretrainConfig, RunConfig, ScheduleConfig

    data = DataConfig(root=str(root), crop_seconds=0.05, num_target=12, num_nontarget=12, corpus=corpus)
    base = dict(backbone=TINY, method=tiny_spec(method), head=TINY_HEAD, data=data,
                schedule=ScheduleConfig(total_steps=steps), pretrain=PretrainConfig(steps=3, batch_size=2),
                batch_size=4, seed=0, out_dir=str(out_dir))
    base.update(kw)
    return RunConfig(**base)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
