import pytest

from moves.core import SensorConfig
from moves.dataset import PairDataset
from moves.synthworld import WorldFamily, sample_pairs, split_labels

TINY_SENSOR = SensorConfig(num_beams=8, num_azimuth=16, r_max=20.0)


def tiny_dataset(n=24, seed=0, sensor=TINY_SENSOR, family=None):
    pairs = sample_pairs(family or WorldFamily(), sensor, n, seed)
    return PairDataset.from_pairs(pairs, split_labels(n))


@pytest.fixture(scope="session")
def tiny_data():
    return tiny_dataset()
