import pytest

from iclab.harness import ExperimentConfig, run_training


def tiny_config(out_dir: str, **overrides) -> ExperimentConfig:
    """A config small enough to train in a few seconds, for plumbing tests."""
    base = dict(
        seed=7,
        out_dir=out_dir,
        resolution=32,
        patch_size=8,
        codebook_size=64,
        codebook_episodes=24,
        n_train=24,
        n_eval=3,
        n_eval_tbt=1,
        line_width=2,
        click_side=5,
        layers=1,
        heads=2,
        embed_dim=32,
        steps=30,
        batch_size=4,
        log_every=10,
        ablation_steps=25,
        ablation_train=16,
        ablation_eval=2,
        sweep_scenes=6,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """One tiny trained run shared across test modules."""
    out = tmp_path_factory.mktemp("tiny_run")
    cfg = tiny_config(str(out))
    artifacts = run_training(cfg)
    return cfg, artifacts
