"""
Shared fixtures: tiny synthetic datasets and architectures that train in seconds.
"""
import pytest

from posr.epochs import generate_synthetic
from posr.models import ArchitectureConfig, BackboneConfig, RunConfig, SynthSpec, TrainConfig


@pytest.fixture
def tiny_synth_spec() -> SynthSpec:
    """3 subjects x 2 sessions x 8 trials, 4 channels, 48 samples."""
    return SynthSpec(
        n_subjects=3,
        n_channels=4,
        n_samples=48,
        fs_hz=100.0,
        trials_per_subject_per_session=8,
        n_sessions=2,
        class_freq_hz=[10.0, 20.0],
        seed=7,
    )


@pytest.fixture
def tiny_batch(tiny_synth_spec):
    return generate_synthetic(tiny_synth_spec)


@pytest.fixture
def small_backbone() -> BackboneConfig:
    return BackboneConfig(
        n_channels=4,
        n_samples=48,
        temporal_kernel=5,
        n_temporal_filters=2,
        n_spatial_filters=2,
        pool_size=2,
        n_extra_blocks=1,
    )


@pytest.fixture
def fast_run_config(tiny_synth_spec) -> RunConfig:
    """Run config that trains a fold of the tiny dataset in well under a second."""
    return RunConfig(
        model=ArchitectureConfig(temporal_kernel=5, n_temporal_filters=2, n_spatial_filters=2, pool_size=2),
        train=TrainConfig(epochs=3, batch_size=8, seed=11),
        synth=tiny_synth_spec,
    )
