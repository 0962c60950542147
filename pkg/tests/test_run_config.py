import pytest

from takeover.errors import ConfigError, InputError
from takeover.schemas.run_config import RunConfig, Workflow, load_run_config, parse_assignments


def test_defaults_and_required_seed():
    run = load_run_config("simulate", flags={"seed": 1})
    assert run.workflow == Workflow.SIMULATE
    assert run.platoon.v_e == 26.2 and run.cf.shares == (0.1, 0.1, 0.7, 0.1)
    assert run.sac.batch_size == 8196 and run.abc.quantile == 0.5

    with pytest.raises(ConfigError) as exc:
        load_run_config("simulate")
    assert exc.value.key_path == "seed"
    assert exc.value.exit_code == 2


def test_precedence_flag_over_set_over_file(tmp_path):
    cfg = tmp_path / "run.env"
    cfg.write_text("seed=1\nruns=3\nplatoon.v_e=20.0\nplatoon.n_followers=2\n", encoding="utf-8")

    run = load_run_config("simulate", cfg)
    assert (run.seed, run.runs, run.platoon.v_e, run.platoon.n_followers) == (1, 3, 20.0, 2)

    run = load_run_config("simulate", cfg, sets=["runs=5", "platoon.v_e=22.5"])
    assert (run.runs, run.platoon.v_e) == (5, 22.5)

    run = load_run_config("simulate", cfg, sets=["runs=5"], flags={"runs": 9, "platoon.n_followers": None})
    # unset flags do not mask lower layers
    assert run.runs == 9 and run.platoon.n_followers == 2


@pytest.mark.parametrize(
    "assignment, key_path",
    [
        ("platoon.v_e=-1", "platoon.v_e"),
        ("platoon.wheels=4", "platoon.wheels"),
        ("sac.discount=1.5", "sac.discount"),
        ("cf.av=autopilot", "cf.av"),
        ("cf.shares=0.5,0.5,0.5,0", "cf.shares"),
        ("ea.phi_x_max=-1", "ea"),
        ("controllers=hl,cruise", "controllers"),
    ],
)
def test_errors_name_the_key(assignment, key_path):
    with pytest.raises(ConfigError) as exc:
        load_run_config("simulate", sets=["seed=1", assignment])
    assert exc.value.key_path == key_path
    assert exc.value.details["key_path"] == key_path


def test_malformed_assignments():
    assert parse_assignments(["a.b = 1", "c=x=y"]) == {"a.b": "1", "c": "x=y"}
    with pytest.raises(ConfigError):
        parse_assignments(["novalue"])
    with pytest.raises(ConfigError):
        load_run_config("simulate", sets=["seed=1", "platoon=3", "platoon.v_e=20"])
    with pytest.raises(InputError):
        load_run_config("simulate", "/nonexistent/run.env")


def test_list_values_from_strings():
    run = load_run_config(
        "evaluate",
        sets=["seed=2", "controllers=HL, idm-pid", "cf.shares=0.25,0.25,0.25,0.25", "abc.synthetic_theta=1,1,30,0.5,0.5,0"],
    )
    assert run.controllers == ("hl", "idm-pid")
    assert run.cf.shares == (0.25, 0.25, 0.25, 0.25)
    assert run.abc.synthetic_theta == (1.0, 1.0, 30.0, 0.5, 0.5, 0.0)


def test_run_id_is_a_hash_of_the_snapshot():
    a = load_run_config("simulate", flags={"seed": 1})
    b = load_run_config("simulate", flags={"seed": 1})
    c = load_run_config("simulate", flags={"seed": 2})
    assert a.run_id() == b.run_id() != c.run_id()
    assert len(a.run_id()) == 12 and int(a.run_id(), 16) >= 0
    assert a.snapshot()["workflow"] == "simulate"
    assert RunConfig.model_validate(a.snapshot()) == a


def test_check_paths(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_run_config("calibrate", flags={"seed": 1}).check_paths()
    assert exc.value.key_path == "paths.observed_bundle"

    load_run_config("calibrate", flags={"seed": 1, "abc.synthetic": 3}).check_paths()

    with pytest.raises(InputError) as exc:
        load_run_config("simulate", flags={"seed": 1, "paths.leader_profile": str(tmp_path / "none.csv")}).check_paths()
    assert exc.value.details["key_path"] == "paths.leader_profile"

    with pytest.raises(ConfigError) as exc:
        load_run_config("evaluate", flags={"seed": 1, "controllers": "policy,hl"}).check_paths()
    assert exc.value.key_path == "paths.checkpoint"
