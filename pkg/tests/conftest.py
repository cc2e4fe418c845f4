import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))


@pytest.fixture(scope="session")
def keypair():
    """A seeded 512-bit keypair shared by the whole session.

    Small keys keep the protocol tests fast; never use them outside tests.
    """
    from ppsr.paillier import TEST_KEYSIZE, keygen

    return keygen(TEST_KEYSIZE, seed=20240611)


@pytest.fixture(scope="session")
def other_keypair():
    from ppsr.paillier import TEST_KEYSIZE, keygen

    return keygen(TEST_KEYSIZE, seed=7)


@pytest.fixture(scope="session")
def small_dataset():
    """A small planted dataset with an informative social network."""
    from ppsr.data_io import SyntheticSpec, generate_synthetic

    return generate_synthetic(
        SyntheticSpec(
            n_items=24, n_users=16, K_true=2, view_features=8, rating_density=0.8, seed=3
        )
    )


@pytest.fixture
def small_config(tmp_path):
    """Experiment config over a small synthetic dataset, writing into tmp_path."""
    from ppsr.config import parse_config

    return parse_config(
        {
            "clustering": {"K": 2, "max_iters": 100},
            "crypto": {"key_bits": 512, "key_seed": 11},
            "experiment": {
                "synthetic": {
                    "n_items": 24,
                    "n_users": 16,
                    "K_true": 2,
                    "view_features": 8,
                    "rating_density": 0.8,
                    "seed": 3,
                },
                "seeds": [0, 1],
            },
            "output": {"dir": str(tmp_path / "results")},
        }
    )
