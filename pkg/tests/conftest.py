import pytest

from decorrmil import DecorrMILClassifier, SyntheticConfig, generate_synthetic


@pytest.fixture(scope="session")
def tiny_dataset():
    cfg = SyntheticConfig(
        n_bags_train=12,
        n_bags_test=6,
        k_range=(15, 25),
        n=8,
        pos_fraction=0.3,
        cluster_sep=3.0,
        confound_strength=1.0,
        confound_flip=True,
        seed=21,
    )
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def tiny_classifier(tiny_dataset):
    clf = DecorrMILClassifier(k=6, epochs_stage1=4, epochs_stage2=4, bank_t=3, seed=21)
    clf.fit(tiny_dataset)
    return clf
