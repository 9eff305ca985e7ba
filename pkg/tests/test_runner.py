import csv
import json

import numpy as np
import pytest

from swarmadmm import admm, cli, dynamics, runner, scenario, trajopt
from swarmadmm.scenario import ParseError, ValidationError, demo, from_dict, load_scenario


def short(name, steps, **extra):
    raw = demo(name)
    raw["mpc_max_steps"] = steps
    raw.update(extra)
    return raw


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


# --- loading ----------------------------------------------------------------

def test_load_minimal(tmp_path):
    cfg = load_scenario(write_json(tmp_path / "s.json", demo("two_drone_swap")))
    assert cfg.n_agents == 2
    assert cfg.initial_states.shape == (2, 12)
    assert cfg.graph.edges == frozenset({(0, 1)})


def test_load_minimal_fields_only(tmp_path):
    raw = {"n_agents": 2, "graph": [[0, 1]], "initial_states": [[0, 0, 1], [3, 0, 1]],
           "goal_positions": [[1, 0, 1], [2, 0, 1]]}
    cfg = load_scenario(write_json(tmp_path / "s.json", raw))
    np.testing.assert_allclose(cfg.mpc.input_ref, cfg.drone_params.hover_input())


@pytest.mark.parametrize("patch,field", [
    ({"mpc": {"d_min": 0}}, "d_min"),
    ({"graph": [[0, 5]]}, "graph"),
    ({"graph": [[0, 0]]}, "graph"),
    ({"admm": {"rho": -1}}, "rho"),
    ({"admm": {"max_rounds": 0}}, "max_rounds"),
    ({"mpc": {"H": 0}}, "H"),
    ({"mpc": {"R": [1, 1, 0, 1]}}, "R"),
    ({"goal_tolerance": 0}, "goal_tolerance"),
    ({"initial_states": [[0, 0, 1]]}, "initial_states"),
    ({"channel": {"drop_probability": 1.5}}, "drop_probability"),
])
def test_validation_names_field(patch, field):
    raw = demo("two_drone_swap")
    for k, v in patch.items():
        if isinstance(v, dict):
            raw[k] = {**raw[k], **v}
        else:
            raw[k] = v
    with pytest.raises(ValidationError) as ei:
        from_dict(raw)
    assert ei.value.field == field


def test_disconnected_graph_rejected():
    raw = demo("triangle")
    raw["graph"] = [[0, 1]]
    with pytest.raises(ValidationError) as ei:
        from_dict(raw)
    assert ei.value.field == "graph"


def test_parse_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        load_scenario(bad)
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "missing.json")


def test_overrides():
    raw = scenario.with_overrides(demo("two_drone_swap"), rho=2.5, max_rounds=7, seed=42)
    cfg = from_dict(raw)
    assert cfg.admm.rho == 2.5 and cfg.admm.max_rounds == 7 and cfg.channel.seed == 42


# --- loop -------------------------------------------------------------------

def test_step0_exit(tmp_path):
    raw = demo("two_drone_swap")
    raw["initial_states"] = [g for g in raw["goal_positions"]]
    res = runner.mpc_loop(from_dict(raw))
    assert res.n_steps == 0 and res.states.shape == (1, 2, 12)
    assert res.goal_reached_step == [0, 0]
    runner.write_outputs(res, tmp_path)
    with open(tmp_path / "trajectories.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert rows[0]["thrust"] == ""


def test_hover_at_goal_applies_hover_thrust():
    raw = demo("two_drone_swap")
    raw["initial_states"] = [g for g in raw["goal_positions"]]
    cfg = from_dict(raw)
    lay = trajopt.Layout(2, cfg.mpc.H)
    model = dynamics.Quadrotor(cfg.drone_params)
    guess = runner.initial_guess(cfg, lay)
    thetas = [trajopt.with_rollout(guess, i, cfg.mpc, model) for i in range(2)]
    prob = runner.SwarmMPCProblem(cfg, lay, model)
    it, _, _ = admm.run_admm(admm.SwarmIterate.start(thetas, cfg.graph), cfg.admm, prob, cfg.graph)
    hover = cfg.drone_params.hover_input()
    for i in range(2):
        np.testing.assert_allclose(lay.inputs(it.thetas[i], i)[0], hover, atol=1e-6)


@pytest.fixture(scope="module")
def swap_short(tmp_path_factory):
    cfg = from_dict(short("two_drone_swap", 8))
    res = runner.mpc_loop(cfg)
    out = tmp_path_factory.mktemp("swap")
    runner.write_outputs(res, out)
    return cfg, res, out


def test_replay_consistency(swap_short):
    cfg, res, out = swap_short
    X, U = runner.read_trajectories(out / "trajectories.csv")
    model = dynamics.Quadrotor(cfg.drone_params)
    for k in range(U.shape[0]):
        for a in range(cfg.n_agents):
            nxt = dynamics.rk4_step(X[k, a], U[k, a], cfg.mpc.h, model)
            assert np.array_equal(nxt, X[k + 1, a])


def test_summary_min_distance_recomputed(swap_short):
    _, res, out = swap_short
    X, _ = runner.read_trajectories(out / "trajectories.csv")
    summary = json.loads((out / "summary.json").read_text())
    md = min(np.linalg.norm(X[k, 0, :3] - X[k, 1, :3]) for k in range(X.shape[0]))
    assert summary["min_distance"] == md
    assert summary["mpc_steps"] == res.n_steps == 8
    assert summary["rounds_per_mpc_step"] == [len(r) for r in res.residuals]


def test_output_files(swap_short):
    _, res, out = swap_short
    with open(out / "residuals.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["mpc_step", "round", "consensus_residual", "dual_residual"]
    assert len(rows) - 1 == sum(len(r) for r in res.residuals)
    with open(out / "delivery.csv") as fh:
        drows = list(csv.reader(fh))
    assert drows[0] == ["round", "sender", "receiver", "status"]
    assert len(drows) - 1 == 2 * sum(len(r) for r in res.residuals)


def test_determinism_short(swap_short, tmp_path):
    cfg, _, out = swap_short
    runner.write_outputs(runner.mpc_loop(cfg), tmp_path)
    for name in ("trajectories.csv", "residuals.csv", "summary.json", "delivery.csv"):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes()


def test_lossy_channel_seeded(tmp_path):
    raw = short("two_drone_swap", 4, channel={"drop_probability": 0.3, "seed": 5})
    a = runner.mpc_loop(from_dict(raw))
    b = runner.mpc_loop(from_dict(raw))
    assert np.array_equal(a.states, b.states)
    assert [d.status for d in a.delivery_log] == [d.status for d in b.delivery_log]
    assert any(d.status != "delivered" for d in a.delivery_log)


def test_unknown_exchange():
    with pytest.raises(ValueError):
        runner.mpc_loop(from_dict(short("single_hover", 1)), exchange="carrier-pigeon")


def test_step_error_reports_index():
    raw = demo("single_hover")
    raw["initial_states"] = [[0, 0, 1, 0, 0, 0, 0, np.pi / 2, 0, 0, 0, 0]]
    with pytest.raises(runner.MPCStepError) as ei:
        runner.mpc_loop(from_dict(raw))
    assert ei.value.step == 0


# --- CLI --------------------------------------------------------------------

def test_cli_demo_validate_run(tmp_path, capsys):
    path = tmp_path / "s.json"
    assert cli.main(["demo", "--name", "single_hover", "--out", str(path)]) == 0
    raw = json.loads(path.read_text())
    raw["mpc_max_steps"] = 3
    write_json(path, raw)
    assert cli.main(["validate", "--scenario", str(path)]) == 0
    code = cli.main(["run", "--scenario", str(path), "--out", str(tmp_path / "o"),
                     "--rho", "2", "--max-rounds", "3", "--seed", "1"])
    assert code == 3  # not at the goal after three steps
    for name in ("trajectories.csv", "residuals.csv", "summary.json", "delivery.csv"):
        assert (tmp_path / "o" / name).exists()


def test_cli_validation_error(tmp_path, capsys):
    raw = demo("two_drone_swap")
    raw["mpc"]["d_min"] = 0
    path = write_json(tmp_path / "s.json", raw)
    assert cli.main(["validate", "--scenario", str(path)]) == 2
    assert "d_min" in capsys.readouterr().err


def test_cli_demo_stdout(capsys):
    assert cli.main(["demo", "--name", "triangle"]) == 0
    raw = json.loads(capsys.readouterr().out)
    assert from_dict(raw).n_agents == 3
