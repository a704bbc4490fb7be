import pytest

from groupact import PretrainConfig, SyntheticConfig, generate_synthetic, pretrain


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small labeled dataset shared by selection/eval/service tests."""
    cfg = SyntheticConfig(
        class_count=4,
        train_per_class=10,
        test_per_class=5,
        persons=6,
        frames=4,
        feature_dim=8,
        noise_scale=0.08,
        appearance_scale=1.0,
        class_appearance_strength=0.25,
        seed=7,
    )
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def tiny_pretrained(tiny_dataset):
    params, history = pretrain(
        tiny_dataset.train_videos(),
        PretrainConfig(epochs=4, batch_size=16),
        seed=3,
    )
    assert len(history) == 4
    return params
