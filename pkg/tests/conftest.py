import numpy as np
import pytest

from platewaste.data import (
    generate_reference_fixture,
    load_manifest,
    save_manifest,
    split_dataset,
    synth_generate,
    toy_training_spec,
)


@pytest.fixture(scope="session")
def small_reference_fixture(tmp_path_factory):
    """Five-food reference fixture at reduced size, shared across tests."""
    root = tmp_path_factory.mktemp("ref_small")
    generated = generate_reference_fixture(root, image_size=64, images_per_stage=6)
    return generated


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Tiny split synthetic dataset for trainer/CLI tests (20 images, 32px)."""
    from dataclasses import replace

    root = tmp_path_factory.mktemp("toy_small")
    spec = toy_training_spec(num_images=20, image_size=32, seed=13)
    gen = synth_generate(spec, root)
    entries = split_dataset(gen.manifest.entries, test_fraction=0.2, val_fraction=0.2, seed=1)
    manifest = replace(gen.manifest, entries=tuple(entries))
    save_manifest(manifest, gen.manifest_path)
    return load_manifest(gen.manifest_path)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
