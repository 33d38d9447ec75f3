import numpy as np
import pytest

from app.config import ModelConfig, RunConfig, SyntheticSpec, TrainConfig
from app.data import clear_feature_cache, generate_synthetic, load_dataset
from app.model import AVCaptioner, ModelParams
from app.training import resolve_model_config


TINY_MODEL = dict(
    encoder_blocks=1, decoder_blocks=1, heads=2,
    d_audio=4, d_visual=6, d_embed=8,
    ffn_audio=8, ffn_visual=8, ffn_decoder=8,
    detector_kernel=3, detector_channels=4, detector_hidden=4,
    dropout=0.0, max_decode_len=8,
)

TINY_DATA = dict(
    num_train=6, num_val=4, vocab_size=20, num_classes=2,
    clip_min=6.0, clip_max=9.0, lead_max=1.0,
    audio_dim=4, visual_dim=6, seed=3,
)


@pytest.fixture(autouse=True)
def fresh_feature_cache():
    clear_feature_cache()
    yield
    clear_feature_cache()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_config():
    return ModelConfig(vocab_size=12, **TINY_MODEL)


@pytest.fixture
def tiny_params(tiny_config):
    return ModelParams.initialize(tiny_config, seed=7)


@pytest.fixture
def tiny_features(rng):
    """Audio [5 x 4] and visual [3 x 6] frames for one event."""
    return rng.normal(size=(5, 4)).astype(np.float32), rng.normal(size=(3, 6)).astype(np.float32)


@pytest.fixture
def run_config():
    return RunConfig(
        seed=0,
        model=ModelConfig(**TINY_MODEL),
        train=TrainConfig(epochs=2, batch_size=3, warmup_steps=2, checkpoint_every=1, learning_rate=1e-2),
        data=SyntheticSpec(**TINY_DATA),
    )


@pytest.fixture
def data_dir(tmp_path, run_config):
    root = tmp_path / "data"
    generate_synthetic(run_config.data, root)
    return root


@pytest.fixture
def dataset(data_dir):
    return load_dataset(data_dir)


@pytest.fixture
def tiny_captioner(dataset, run_config):
    """Untrained captioner sized to the generated dataset's vocabulary."""
    config = resolve_model_config(run_config.model, dataset.vocab)
    return AVCaptioner(ModelParams.initialize(config, seed=11))
