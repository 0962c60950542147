import numpy as np
import pytest
import torch

from takeover.core.rng import RngStream
from takeover.errors import CheckpointError
from takeover.rl.networks import MAGIC, Actor, PolicyFunction, TwinCritic, load_checkpoint, policy_act, save_checkpoint

OBS = np.array([38.7, 41.0, 0.5, -0.3, 0.1, 0.05, 0.0])


@pytest.fixture
def actor():
    torch.manual_seed(0)
    return Actor(hidden=(8, 8))


def test_checkpoint_round_trip(actor, tmp_path):
    path = save_checkpoint(PolicyFunction(actor), tmp_path / "ckpt" / "policy.bin")
    assert path.read_bytes().startswith(MAGIC)

    loaded = load_checkpoint(path, expected_sizes=(7, 8, 8, 1))
    assert loaded.actor.sizes == (7, 8, 8, 1)
    assert (loaded.a_min, loaded.a_max) == (actor.a_min, actor.a_max)
    # float32 parameters survive bit for bit
    for name, tensor in actor.state_dict().items():
        assert torch.equal(tensor, loaded.actor.state_dict()[name]), name
    assert policy_act(loaded, OBS, None) == policy_act(PolicyFunction(actor), OBS, None)


def test_checkpoint_rejects_other_layer_sizes(actor, tmp_path):
    path = save_checkpoint(PolicyFunction(actor), tmp_path / "policy.bin")
    with pytest.raises(CheckpointError, match="layer sizes"):
        load_checkpoint(path, expected_sizes=(7, 256, 256, 1))


def test_checkpoint_rejects_damaged_files(actor, tmp_path):
    good = save_checkpoint(PolicyFunction(actor), tmp_path / "policy.bin").read_bytes()

    bad_magic = tmp_path / "magic.bin"
    bad_magic.write_bytes(b"NOTPOL" + good[6:])
    truncated_header = tmp_path / "header.bin"
    truncated_header.write_bytes(good[:9])
    short_params = tmp_path / "params.bin"
    short_params.write_bytes(good[:-4])

    for path in (bad_magic, truncated_header, short_params, tmp_path / "missing.bin"):
        with pytest.raises(CheckpointError) as exc:
            load_checkpoint(path)
        assert exc.value.exit_code == 4
        assert exc.value.details["path"] == str(path)


def test_log_std_is_clamped(actor):
    obs = torch.zeros((1, 7))
    with torch.no_grad():
        actor.log_std.weight.zero_()
        actor.log_std.bias.fill_(100.0)
        assert actor(obs)[1].item() == pytest.approx(2.5)
        actor.log_std.bias.fill_(-100.0)
        assert actor(obs)[1].item() == pytest.approx(-20.0)


def test_sampled_actions_stay_in_bounds(actor):
    gen = torch.Generator().manual_seed(1)
    obs = torch.randn((10_000, 7), generator=gen) * 30.0
    noise = torch.randn((10_000, 1), generator=gen) * 5.0
    with torch.no_grad():
        action, logp, det = actor.sample(obs, noise)
    assert action.shape == (10_000, 1) and logp.shape == (10_000, 1)
    assert float(action.min()) >= actor.a_min and float(action.max()) <= actor.a_max
    assert float(det.min()) >= actor.a_min and float(det.max()) <= actor.a_max
    assert torch.isfinite(logp).all()


def test_reparameterized_sample_has_correct_gradients():
    torch.manual_seed(2)
    actor = Actor(hidden=(4,)).double()
    obs = torch.randn((3, 7), dtype=torch.float64, requires_grad=True)
    noise = torch.randn((3, 1), dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda o: actor.sample(o, noise), (obs,), eps=1e-6, atol=1e-4)


def test_stochastic_policy_is_reproducible(actor):
    pf = PolicyFunction(actor)
    a = [policy_act(pf, OBS, RngStream(4)) for _ in range(2)]
    assert a[0] == a[1]
    assert actor.a_min <= a[0] <= actor.a_max


def test_twin_critics_are_independent():
    torch.manual_seed(3)
    critic = TwinCritic(hidden=(8, 8))
    q1, q2 = critic(torch.zeros((2, 7)), torch.zeros((2, 1)))
    assert q1.shape == q2.shape == (2, 1)
    assert not torch.equal(q1, q2)
