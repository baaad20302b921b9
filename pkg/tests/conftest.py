import numpy as np
import pytest

from trajcodec import Channel, Trajectory, TokenizerConfig, synth, tokenizer

CHANNELS_7 = (
    Channel("x", "position"),
    Channel("y", "position"),
    Channel("z", "position"),
    Channel("roll", "rotation"),
    Channel("pitch", "rotation"),
    Channel("yaw", "rotation"),
    Channel("grip", "gripper"),
)


def make_trajectory(values, traj_id="t0", rate_hz=30.0, embodiment="test"):
    values = np.asarray(values, dtype=np.float64)
    return Trajectory(
        values=values,
        channels=CHANNELS_7[: values.shape[1]] if values.shape[1] <= 7 else None,
        rate_hz=rate_hz,
        embodiment=embodiment,
        traj_id=traj_id,
    )


@pytest.fixture(scope="session")
def small_corpus():
    return synth.gen_corpus(120, seed=101)


@pytest.fixture(scope="session")
def small_config():
    # Shrunk for test speed; structure identical to the defaults.
    return TokenizerConfig(epochs=2, batch_size=64, bpe_merges=128)


@pytest.fixture(scope="session")
def small_artifact(small_corpus, small_config):
    return tokenizer.fit(small_corpus, small_config, seed=13)
