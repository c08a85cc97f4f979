import json
from dataclasses import replace
from pathlib import Path

import pytest
import yaml

from qmotif.cli import (
    ExperimentConfig, export_lineage, load_config, load_results, main, preset_names, resume, run,
    search_space_size,
)
from qmotif.dsl import parse_program
from qmotif.evolve import TIERS, Candidate, ConfigError, Mutation, load_space
from qmotif.fitness import FitnessReport
from qmotif.tasks import reference_programs


class FakeSpace:
    def __init__(self, c):
        self.c = c

    def primitive_count(self):
        return self.c


def tiny(tmp_path, **hp):
    base = {"init_size": 24, "n_batch": 2, "max_generations": 4, "stop_threshold": 1.1}
    base.update(hp)
    return ExperimentConfig(task="deutsch_jozsa", tier="small", out=str(tmp_path / "run"),
                            seed=7, checkpoint_every=1, hyperparams=base)


def files(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def read_log(d: Path) -> list[dict]:
    return [json.loads(ln) for ln in (d / "log.jsonl").read_text().splitlines()]


def test_search_space_size_examples():
    assert search_space_size(FakeSpace(2), 1) == 2
    assert search_space_size(FakeSpace(2), 3) == 14
    assert search_space_size(FakeSpace(730), 40) == sum(730 ** k for k in range(1, 41))  # exact big int
    with pytest.raises(ValueError):
        search_space_size(FakeSpace(2), 0)


@pytest.mark.parametrize("task", ["qft", "deutsch_jozsa", "grover"])
def test_space_size_monotone_in_tier(task):
    sizes = [search_space_size(load_space(task, t), 5) for t in TIERS]
    assert all(a < b for a, b in zip(sizes, sizes[1:]))


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig(tier="enormous")
    with pytest.raises(ConfigError):
        ExperimentConfig(hyperparams={"tournament_pressure": 2})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"schema": "other/9"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_config_roundtrip_and_presets(tmp_path):
    cfg = tiny(tmp_path)
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict()))
    assert load_config(path) == cfg
    assert {"dj_small", "grover_small", "qft_small"} <= set(preset_names())
    dj = load_config("dj_small")
    assert dj.task == "deutsch_jozsa" and dj.tier == "small" and dj.step_capped
    assert dj.hyperparams_obj().budget.seconds is None


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    return run(tiny(tmp)), tmp


def test_run_writes_results(tiny_run):
    out, _ = tiny_run
    assert {"config.yaml", "log.jsonl", "checkpoint.json", "best.txt", "report.json",
            "lineage.dot", "summary.txt"} <= set(files(out))
    report = json.loads((out / "report.json").read_text())
    assert report["schema"] == "qmotif.report/1"
    assert report["success"] is False and report["timed_out"] is True
    assert report["evaluations"] == 24 + 8 * 2 * 4
    assert set(report["chosen_r"]) == {"2", "3", "4"}
    best = parse_program((out / "best.txt").read_text())
    assert str(best) == report["best"]["program"]
    assert (out / "best.txt").read_text().startswith("# qmotif.program/1\n")


def test_log_rows(tiny_run):
    out, _ = tiny_run
    rows = read_log(out)
    assert [r["generation"] for r in rows] == list(range(5))
    space = search_space_size(load_space("deutsch_jozsa", "small"), 5)
    maxes = [r["max_fitness"] for r in rows]
    assert maxes == sorted(maxes)
    for r in rows:
        assert r["schema"] == "qmotif.log/1"
        assert r["evaluations_over_space"] == pytest.approx(r["evaluations"] / space)
        assert len(r["top"]) <= 200 and r["top"] == sorted(r["top"], reverse=True)
        assert r["top"][0] == r["max_fitness"]


def test_same_seed_gives_identical_directory(tiny_run, tmp_path):
    out, _ = tiny_run
    again = run(replace(tiny(tmp_path), out=str(tmp_path / "again")))
    a, b = files(out), files(again)
    a.pop("config.yaml"), b.pop("config.yaml")  # records the output path
    assert a == b


def test_zero_runtime_only_generation_zero(tmp_path):
    cfg = tiny(tmp_path, max_runtime=0, max_generations=None)
    out = run(cfg)
    assert [r["generation"] for r in read_log(out)] == [0]
    report = json.loads((out / "report.json").read_text())
    assert report["generations"] == 0 and report["timed_out"]


def test_resume_matches_straight_run(tiny_run, tmp_path):
    out, _ = tiny_run
    part = run(replace(tiny(tmp_path, max_generations=2), out=str(tmp_path / "part")))
    resume(part, max_generations=4)
    for name in ("log.jsonl", "best.txt", "lineage.dot"):
        assert (part / name).read_bytes() == (out / name).read_bytes()
    a = json.loads((part / "checkpoint.json").read_text())
    b = json.loads((out / "checkpoint.json").read_text())
    assert a["population"] == b["population"] and a["rng_state"] == b["rng_state"]


def test_resume_needs_checkpoint(tmp_path):
    with pytest.raises(ConfigError):
        resume(tmp_path)


def rep(f):
    return FitnessReport({2: f}, f, {}, f, {2: []}, {2: 1}, {2: [f]})


def test_lineage_single_init_node():
    pop = [Candidate(0, reference_programs()["qft"], rep(0.5))]
    dot = export_lineage(pop, pop[0])
    assert dot.count("->") == 0 and dot.count("[label=") == 1
    assert dot.startswith("// schema: qmotif.lineage/1\ndigraph")


def test_lineage_chop_join_in_degree_two():
    p = reference_programs()["qft"]
    pop = [Candidate(0, p, rep(0.1)), Candidate(1, p, rep(0.2)), Candidate(2, p, rep(0.3)),
           Candidate(3, p, rep(0.4), (0, 1), Mutation.CHOP_JOIN, 1),
           Candidate(4, p, rep(0.5), (3,), Mutation.INSERT, 2)]
    dot = export_lineage(pop, pop[4])
    assert dot.count("-> n3") == 2
    assert 'n3 -> n4 [mutation="insert"' in dot
    assert "n2 " not in dot  # not an ancestor
    assert 'f_total="0.500000"' in dot


def test_lineage_of_run_is_ancestor_closure(tiny_run):
    out, _ = tiny_run
    pop, best = load_results(out)
    dot = (out / "lineage.dot").read_text()
    nodes = {int(x) for x in __import__("re").findall(r"^  n(\d+) \[label", dot, flags=8)}
    stack, seen = [best.id], set()
    while stack:
        i = stack.pop()
        if i not in seen:
            seen.add(i)
            stack.extend(pop[i].parents)
    assert nodes == seen


def test_cli_show(capsys):
    assert main(["show", 'QPivot(H, "1*")\nQPivot(CP, "1*")\nQMask("1*") * r', "-n", "3", "-r", "3",
                 "--format", "qasm", "--params", "qft"]) == 0
    out = capsys.readouterr().out
    assert "cu1(pi/4) q[2],q[0];" in out
    assert main(["show", "QCycle(H) * 1", "-n", "2"]) == 0
    assert capsys.readouterr().out.count("H") == 2


def test_cli_show_lowered_oracle(capsys):
    assert main(["show", "Oracle\nQCycle(H) * 1", "-n", "3", "--format", "qasm",
                 "--task", "grover", "--instance", "5"]) == 0
    assert "ccx" in capsys.readouterr().out


def test_cli_errors_carry_positions(capsys):
    assert main(["show", "QCycle(H) * 1\nQCycle(", "-n", "2"]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["show", "Oracle * 1", "-n", "2", "--format", "qasm"]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["run", "--config", "/nonexistent.yaml"]) == 2


def test_cli_tasks_and_space_size(capsys):
    assert main(["tasks", "list"]) == 0
    out = capsys.readouterr().out
    assert "grover" in out and "Q=[3, 4, 5]" in out
    assert main(["space-size", "--task", "dj", "--tier", "small", "-n", "2"]) == 0
    assert "programs(n<=2)=182" in capsys.readouterr().out  # 13 + 13^2


def test_cli_run_and_lineage(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(tiny(tmp_path, max_generations=1).to_dict()))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "3",
                 "--step-capped"]) == 0
    assert "status:" in capsys.readouterr().out
    assert yaml.safe_load((tmp_path / "o" / "config.yaml").read_text())["seed"] == 3
    assert main(["lineage", "--out", str(tmp_path / "o"), "--dot", str(tmp_path / "l.dot")]) == 0
    assert (tmp_path / "l.dot").read_text().startswith("// schema")
