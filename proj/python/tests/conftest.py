import pytest

import kamp

TINY_MODEL = {
    "img_h": 32,
    "img_w": 32,
    "hm_h": 8,
    "hm_w": 8,
    "base_channels": 2,
    "head_hidden": 4,
    "kanet_channels": 4,
}

TINY_RUN = {
    "epochs_total": 3,
    "epochs_stage1": 1,
    "batch_size": 6,
    "lr": 0.005,
    "stage1_lr": 0.001,
    "model": TINY_MODEL,
}


@pytest.fixture(scope="session")
def bundle_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "bundle"
    graph = kamp.build_default_anatomy(8)
    schedule = kamp.schedule_from_group_sizes([4, 2, 2], 8)
    kamp.generate_bundle(
        graph, schedule, train_sizes=[12, 10, 10], test_size=8, seed=77,
        img_h=32, img_w=32, dir=str(d),
    )
    return d


@pytest.fixture()
def bundle(bundle_dir):
    return kamp.DatasetBundle.load(str(bundle_dir))
