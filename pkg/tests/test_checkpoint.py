import struct

import numpy as np
import pytest

from refine3d.autodiff.tensor import no_grad
from refine3d.errors import ConfigError, FormatError
from refine3d.model.config import DESK
from refine3d.model.network import Refine3DNet
from refine3d.model.registry import Partition
from refine3d.settings import RunConfig
from refine3d.synthdata.dataset_service import load_dataset
from refine3d.training.adam import AdamState
from refine3d.training.checkpoint import (
    MAGIC,
    VERSION,
    _pack_str,
    decode_tensors,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from refine3d.training.jtso_service import JTSOTrainer
from refine3d.training.state import TrainState

SHORT_RUN = RunConfig(batch_size=1, phase1_steps=2, phase2_steps=2, views_max=2, eval_every=100, seed=4)


@pytest.fixture(scope="module")
def desk_dataset(desk_dataset_root):
    return load_dataset(desk_dataset_root, threads=1)


@pytest.fixture
def saved(tmp_path):
    net = Refine3DNet(DESK, seed=0)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, net, {p: AdamState() for p in Partition}, TrainState())
    return net, path


def forward_bytes(net, images):
    with no_grad():
        v_decoder, v_refined = net.forward(images, training=False)
    return v_decoder.data.tobytes() + v_refined.data.tobytes()


def test_reloaded_network_computes_the_same_volumes(saved, rng):
    net, path = saved
    images = rng.uniform(0, 1, (2, 3, 32, 32)).astype(np.float32)
    ckpt = load_checkpoint(path, expected_preset="desk")
    assert ckpt.preset == "desk"
    assert forward_bytes(ckpt.net, images) == forward_bytes(net, images)
    assert all(ckpt.net.params.digest(p) == net.params.digest(p) for p in Partition)


def test_trainer_state_round_trip(tmp_path, desk_dataset):
    trainer = JTSOTrainer(Refine3DNet(DESK, seed=0), desk_dataset, SHORT_RUN)
    trainer.train_phase1()
    path = tmp_path / "phase1.ckpt"
    save_checkpoint(path, trainer.net, trainer.optimizers, trainer.state)

    ckpt = load_checkpoint(path)
    assert ckpt.state == trainer.state
    assert ckpt.state.rng_state == trainer.rng.bit_generator.state
    for partition, opt in trainer.optimizers.items():
        loaded = ckpt.optimizers[partition]
        assert loaded.tau == opt.tau
        assert sorted(loaded.m) == sorted(opt.m)
        for name in opt.m:
            assert loaded.m[name].tobytes() == opt.m[name].tobytes()
            assert loaded.v[name].tobytes() == opt.v[name].tobytes()


def test_resumed_training_matches_a_continuous_run(tmp_path, desk_dataset):
    continuous = JTSOTrainer(Refine3DNet(DESK, seed=0), desk_dataset, SHORT_RUN)
    continuous.train_phase1()
    continuous.train_phase2()

    first = JTSOTrainer(Refine3DNet(DESK, seed=0), desk_dataset, SHORT_RUN)
    first.train_phase1()
    path = tmp_path / "phase1.ckpt"
    save_checkpoint(path, first.net, first.optimizers, first.state)
    ckpt = load_checkpoint(path)
    resumed = JTSOTrainer(ckpt.net, desk_dataset, SHORT_RUN, ckpt.state, ckpt.optimizers, first.metrics)
    resumed.train_phase2()

    assert resumed.net.params.digest() == continuous.net.params.digest()
    assert resumed.metrics.to_csv() == continuous.metrics.to_csv()


@pytest.mark.parametrize(
    "mutate",
    [lambda p: p[:-3], lambda p: p + b"\x00", lambda p: b"XXXX" + p[4:]],
    ids=["truncated", "trailing", "magic"],
)
def test_damaged_files(saved, mutate):
    _, path = saved
    payload = path.read_bytes()
    assert payload.startswith(MAGIC)
    path.write_bytes(mutate(payload))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_preset_mismatch(saved):
    _, path = saved
    with pytest.raises(ConfigError):
        load_checkpoint(path, expected_preset="paper")


def test_encoding_is_deterministic():
    net = Refine3DNet(DESK, seed=2)
    optimizers = {p: AdamState() for p in Partition}
    assert encode_checkpoint(net, optimizers, TrainState()) == encode_checkpoint(net, optimizers, TrainState())


def test_oversized_dimensions_are_a_format_error(tmp_path):
    header = MAGIC + struct.pack("<I", VERSION) + _pack_str("desk") + struct.pack("<I", 1)
    # 65536^4 floats wrap to zero in 64-bit arithmetic
    record = _pack_str("encoder.fc.bias") + struct.pack("<BB", 0, 4) + struct.pack("<4I", *(65536,) * 4)
    with pytest.raises(FormatError) as info:
        decode_tensors(header + record)
    assert info.value.offset == len(header + record)

    path = tmp_path / "huge.ckpt"
    path.write_bytes(header + record + b"\x00" * 16)
    with pytest.raises(FormatError):
        load_checkpoint(path)
