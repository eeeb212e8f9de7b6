"""Config parsing, experiment orchestration, output contract, and CLI."""
import csv
import json
import math

import numpy as np
import pytest

from slowcal_lab import cli
from slowcal_lab.data import serialize_idx_images, serialize_idx_labels
from slowcal_lab.objectives import LogisticEnsemble, QuadraticEnsemble
from slowcal_lab.runner import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentSpec,
    build_problem,
    load_spec,
    mnist_experiment,
    run_experiment,
    spec_from_dict,
    sweep,
)
from slowcal_lab.tuning import LrInputs, theoretical_lr


def base_config(**overrides):
    cfg = {
        "problem": {"kind": "quadratic", "dim": 5, "sigma": 0.3, "problem_seed": 3},
        "algorithm": ["minibatch", "local"],
        "machines": [2],
        "local_steps": [2],
        "rounds": 5,
        "lr": "fixed:0.05",
        "seeds": [0, 1],
    }
    cfg.update(overrides)
    return cfg


def read_rows(csv_path):
    with open(csv_path, newline="") as handle:
        return list(csv.DictReader(handle))


def strip_timing(rows):
    return [{k: v for k, v in row.items() if k != "wall_ms"} for row in rows]


class TestSpecParsing:
    def test_defaults_are_filled(self):
        spec = spec_from_dict(base_config())
        assert spec.name == "experiment"
        assert spec.schedule == "linear"
        assert spec.x0 == "zeros"
        assert spec.out_dir == "runs"
        assert spec.diagnostics is False
        assert spec.lr == "fixed:0.05"
        assert spec.problem["curvature"] == "per-machine"
        assert spec.problem["eig_range"] == [0.5, 2.0]
        assert spec.problem["center_spread"] == 1.0
        assert spec.problem["target_gstar"] is None

    def test_lr_defaults_to_theory(self):
        cfg = base_config()
        del cfg["lr"]
        assert spec_from_dict(cfg).lr == "theory"

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown config field"):
            spec_from_dict(base_config(momentum=0.9))

    @pytest.mark.parametrize(
        "field", ["problem", "algorithm", "machines", "local_steps", "seeds"]
    )
    def test_missing_required_field(self, field):
        cfg = base_config()
        del cfg[field]
        with pytest.raises(ConfigError, match="missing required"):
            spec_from_dict(cfg)

    def test_unknown_algorithm(self):
        with pytest.raises(ConfigError, match="unknown algorithm"):
            spec_from_dict(base_config(algorithm=["minibatch", "adam"]))

    def test_unknown_problem_kind_and_field(self):
        with pytest.raises(ConfigError, match="kind"):
            spec_from_dict(base_config(problem={"kind": "cubic", "dim": 3}))
        with pytest.raises(ConfigError, match="unknown quadratic problem field"):
            spec_from_dict(
                base_config(problem={"kind": "quadratic", "dim": 3, "rank": 2})
            )

    def test_dim_is_required(self):
        with pytest.raises(ConfigError, match="dim"):
            spec_from_dict(base_config(problem={"kind": "quadratic"}))

    def test_rounds_xor_total_steps(self):
        cfg = base_config()
        cfg["total_steps"] = 10
        with pytest.raises(ConfigError, match="exactly one"):
            spec_from_dict(cfg)
        del cfg["rounds"], cfg["total_steps"]
        with pytest.raises(ConfigError, match="exactly one"):
            spec_from_dict(cfg)

    def test_total_steps_divisibility(self):
        cfg = base_config(local_steps=[2, 3])
        del cfg["rounds"]
        cfg["total_steps"] = 8
        with pytest.raises(ConfigError, match="multiple"):
            spec_from_dict(cfg)
        cfg["total_steps"] = 12
        spec = spec_from_dict(cfg)
        assert spec.rounds is None and spec.total_steps == 12

    @pytest.mark.parametrize("bad", ["circle", "ones:", "ones:abc"])
    def test_bad_start_directive(self, bad):
        with pytest.raises(ConfigError, match="x0"):
            spec_from_dict(base_config(x0=bad))

    @pytest.mark.parametrize(
        "bad",
        ["adaptive", "fixed:-1", "fixed:xyz", "fixed:inf",
         "grid:[]", "grid:[0.1, -2]", "grid:nonsense"],
    )
    def test_bad_lr_strings(self, bad):
        with pytest.raises(ConfigError):
            spec_from_dict(base_config(lr=bad))

    def test_lr_mapping_must_cover_every_algorithm(self):
        with pytest.raises(ConfigError, match="missing algorithm"):
            spec_from_dict(base_config(lr={"minibatch": "fixed:0.1"}))
        with pytest.raises(ConfigError, match="unknown algorithm"):
            spec_from_dict(base_config(lr={
                "minibatch": "fixed:0.1", "local": "theory", "adam": "theory",
            }))
        spec = spec_from_dict(base_config(lr={
            "minibatch": "fixed:0.1", "local": "grid:[0.01, 0.1]",
        }))
        assert spec.lr["local"] == "grid:[0.01, 0.1]"

    def test_scalar_list_validation(self):
        with pytest.raises(ConfigError):
            spec_from_dict(base_config(machines=[0]))
        with pytest.raises(ConfigError):
            spec_from_dict(base_config(seeds=[-1]))
        with pytest.raises(ConfigError):
            spec_from_dict(base_config(local_steps=[]))
        with pytest.raises(ConfigError):
            spec_from_dict(base_config(diagnostics="yes"))
        with pytest.raises(ConfigError, match="schedule"):
            spec_from_dict(base_config(schedule="cubic"))
        with pytest.raises(ConfigError, match="rounds"):
            spec_from_dict(base_config(rounds=0))


class TestLoadSpec:
    def test_round_trips_json(self, tmp_path):
        cfg = base_config()
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert load_spec(path) == spec_from_dict(cfg)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_spec(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_spec(path)


class TestBuildProblem:
    def test_quadratic(self):
        spec = spec_from_dict(base_config())
        prob = build_problem(spec.problem, 3)
        assert isinstance(prob, QuadraticEnsemble)
        assert prob.dim == 5
        assert prob.metadata(np.zeros(5)).sigma == 0.3

    def test_synth_logistic(self):
        spec = spec_from_dict(base_config(problem={
            "kind": "synth-logistic", "dim": 6, "num_classes": 3, "problem_seed": 1,
        }))
        prob = build_problem(spec.problem, 2)
        assert isinstance(prob, LogisticEnsemble)
        assert prob.dim == 3 * 6

    def test_mnist_is_rejected_here(self):
        spec = spec_from_dict(base_config(problem={"kind": "mnist-logistic"}))
        with pytest.raises(ConfigError, match="mnist_experiment"):
            build_problem(spec.problem, 2)


class TestRunExperiment:
    def test_csv_and_manifest_contract(self, tmp_path):
        spec = spec_from_dict(base_config())
        summary = run_experiment(spec, out_dir=tmp_path)
        assert summary.num_runs == 4
        assert not summary.any_diverged
        assert summary.csv_path == tmp_path / "runs.csv"

        rows = read_rows(summary.csv_path)
        assert list(rows[0].keys()) == CSV_COLUMNS
        assert len(rows) == 4 * 5
        assert {row["eta"] for row in rows} == {"0.05"}
        assert {row["diverged"] for row in rows} == {"false"}
        for row in rows:
            assert row["run_id"] == f"{row['algorithm']}-quadratic-M2-K2-s{row['seed']}"
            assert int(row["t"]) == (int(row["round"]) + 1) * 2
        keys = [(r["algorithm"], int(r["M"]), int(r["K"]), int(r["seed"]), int(r["round"]))
                for r in rows]
        assert keys == sorted(keys)

        manifest = json.loads(summary.manifest_path.read_text())
        assert set(manifest) == {
            "spec", "csv_columns", "created_utc", "resolved_lr",
            "problem_metadata", "package_version", "warnings",
        }
        assert manifest["csv_columns"] == CSV_COLUMNS
        assert manifest["resolved_lr"] == {"minibatch-M2-K2": 0.05, "local-M2-K2": 0.05}
        assert set(manifest["problem_metadata"]["M2"]) == {
            "smoothness", "sigma", "gstar", "f_star", "b0",
        }
        assert manifest["warnings"] == []
        assert manifest["spec"]["problem"]["kind"] == "quadratic"

    def test_reruns_are_identical_up_to_timing(self, tmp_path):
        spec = spec_from_dict(base_config())
        a = run_experiment(spec, out_dir=tmp_path / "a")
        b = run_experiment(spec, out_dir=tmp_path / "b")
        assert strip_timing(read_rows(a.csv_path)) == strip_timing(read_rows(b.csv_path))
        ma = json.loads(a.manifest_path.read_text())
        mb = json.loads(b.manifest_path.read_text())
        ma.pop("created_utc"), mb.pop("created_utc")
        assert ma == mb

    def test_theory_lr_matches_recomputation(self, tmp_path):
        spec = spec_from_dict(base_config(lr="theory"))
        summary = run_experiment(spec, out_dir=tmp_path)
        manifest = json.loads(summary.manifest_path.read_text())
        md = manifest["problem_metadata"]["M2"]
        want = theoretical_lr(LrInputs(
            smoothness=md["smoothness"], sigma=md["sigma"], gstar=md["gstar"],
            b0=md["b0"], M=2, K=2, R=5,
        ))
        for eta in manifest["resolved_lr"].values():
            assert eta == want
        rows = read_rows(summary.csv_path)
        assert {row["eta"] for row in rows} == {repr(want)}

    def test_theory_with_nonlinear_schedule_warns(self, tmp_path, capsys):
        spec = spec_from_dict(base_config(lr="theory", schedule="uniform"))
        summary = run_experiment(spec, out_dir=tmp_path)
        manifest = json.loads(summary.manifest_path.read_text())
        assert len(manifest["warnings"]) == 1
        assert "linear" in manifest["warnings"][0]
        assert "warning" in capsys.readouterr().err

    def test_grid_lr_tunes_per_algorithm(self, tmp_path):
        # on this problem the anchor-averaging baseline prefers the large
        # step while the drift-corrected method prefers the small one
        spec = spec_from_dict(base_config(
            problem={"kind": "quadratic", "dim": 6, "sigma": 0.5, "problem_seed": 3},
            algorithm=["minibatch", "slowcal"],
            machines=[4], local_steps=[4], rounds=10,
            lr="grid:[0.01, 0.1]", seeds=[0, 1],
        ))
        summary = run_experiment(spec, out_dir=tmp_path)
        manifest = json.loads(summary.manifest_path.read_text())
        assert manifest["resolved_lr"]["minibatch-M4-K4"] == 0.1
        assert manifest["resolved_lr"]["slowcal-M4-K4"] == 0.01
        rows = read_rows(summary.csv_path)
        etas = {row["algorithm"]: row["eta"] for row in rows}
        assert etas == {"minibatch": "0.1", "slowcal": "0.01"}

    def test_start_directive_sets_initial_distance(self, tmp_path):
        spec = spec_from_dict(base_config(x0="ones:5"))
        summary = run_experiment(spec, out_dir=tmp_path)
        manifest = json.loads(summary.manifest_path.read_text())
        prob = build_problem(spec.problem, 2)
        x0 = 5.0 * np.ones(5) / math.sqrt(5)
        want = float(np.linalg.norm(x0 - prob.w_star))
        assert manifest["problem_metadata"]["M2"]["b0"] == pytest.approx(want, rel=1e-12)

    def test_total_steps_mode_scales_rounds_per_k(self, tmp_path):
        cfg = base_config(local_steps=[2, 3])
        del cfg["rounds"]
        cfg["total_steps"] = 12
        summary = run_experiment(spec_from_dict(cfg), out_dir=tmp_path)
        rows = read_rows(summary.csv_path)
        per_k = {}
        for row in rows:
            per_k.setdefault((row["run_id"], row["K"]), 0)
            per_k[(row["run_id"], row["K"])] += 1
        for (run_id, k), count in per_k.items():
            assert count == 12 // int(k), run_id
            assert run_id.endswith(f"-s0") or run_id.endswith("-s1")

    def test_out_dir_resolution(self, tmp_path, monkeypatch):
        spec = spec_from_dict(base_config(out_dir=str(tmp_path / "from_spec")))
        env_dir = tmp_path / "from_env"
        monkeypatch.setenv("SLOWCAL_LAB_OUT", str(env_dir))
        summary = run_experiment(spec)
        assert summary.out_dir == env_dir

        override = tmp_path / "from_arg"
        summary = run_experiment(spec, out_dir=override)
        assert summary.out_dir == override

        monkeypatch.delenv("SLOWCAL_LAB_OUT")
        summary = run_experiment(spec)
        assert summary.out_dir == tmp_path / "from_spec"

    def test_parallel_matches_serial(self, tmp_path, monkeypatch):
        spec = spec_from_dict(base_config())
        serial = run_experiment(spec, out_dir=tmp_path / "serial")
        monkeypatch.setenv("SLOWCAL_LAB_JOBS", "2")
        parallel = run_experiment(spec, out_dir=tmp_path / "parallel")
        assert strip_timing(read_rows(serial.csv_path)) == strip_timing(
            read_rows(parallel.csv_path))

    def test_bad_jobs_env(self, tmp_path, monkeypatch):
        spec = spec_from_dict(base_config())
        monkeypatch.setenv("SLOWCAL_LAB_JOBS", "two")
        with pytest.raises(ConfigError, match="SLOWCAL_LAB_JOBS"):
            run_experiment(spec, out_dir=tmp_path)
        monkeypatch.setenv("SLOWCAL_LAB_JOBS", "0")
        with pytest.raises(ConfigError, match="SLOWCAL_LAB_JOBS"):
            run_experiment(spec, out_dir=tmp_path)

    def test_divergence_is_recorded(self, tmp_path):
        spec = spec_from_dict(base_config(
            algorithm=["local"], lr="fixed:10", seeds=[0], x0="ones:3",
        ))
        summary = run_experiment(spec, out_dir=tmp_path)
        assert summary.any_diverged
        rows = read_rows(summary.csv_path)
        assert rows[-1]["diverged"] == "true"
        assert rows[-1]["excess_loss"] == "inf"

    def test_mnist_kind_is_rejected(self, tmp_path):
        spec = spec_from_dict(base_config(problem={"kind": "mnist-logistic"}))
        with pytest.raises(ConfigError, match="mnist"):
            run_experiment(spec, out_dir=tmp_path)


class TestSweep:
    def test_cartesian_product(self, tmp_path):
        spec = spec_from_dict(base_config(
            machines=[2, 3], local_steps=[2, 4], rounds=4, seeds=[0],
        ))
        summary = sweep(spec, out_dir=tmp_path)
        assert summary.num_runs == 2 * 2 * 2
        rows = read_rows(summary.csv_path)
        cells = {(r["algorithm"], r["M"], r["K"]) for r in rows}
        assert len(cells) == 8
        keys = [(r["algorithm"], int(r["M"]), int(r["K"]), int(r["seed"]), int(r["round"]))
                for r in rows]
        assert keys == sorted(keys)

    def test_rejects_empty_dimensions(self, tmp_path):
        spec = spec_from_dict(base_config())
        import dataclasses
        hollow = dataclasses.replace(spec, algorithms=())
        with pytest.raises(ConfigError, match="nonempty"):
            sweep(hollow, out_dir=tmp_path)


def write_idx_dir(root, n_train=80, n_test=20):
    rng = np.random.default_rng(5)
    train = rng.integers(0, 256, size=(n_train, 6), dtype=np.uint8) / 255.0
    test = rng.integers(0, 256, size=(n_test, 6), dtype=np.uint8) / 255.0
    train_y = np.arange(n_train, dtype=np.int64) % 10
    test_y = np.arange(n_test, dtype=np.int64) % 10
    (root / "train-images-idx3-ubyte").write_bytes(serialize_idx_images(train, rows=2, cols=3))
    (root / "train-labels-idx1-ubyte").write_bytes(serialize_idx_labels(train_y))
    (root / "t10k-images-idx3-ubyte").write_bytes(serialize_idx_images(test, rows=2, cols=3))
    (root / "t10k-labels-idx1-ubyte").write_bytes(serialize_idx_labels(test_y))


def mnist_config(**overrides):
    cfg = base_config(
        problem={"kind": "mnist-logistic", "l2": 0.01, "label_skew": 5.0,
                 "train_limit": 60, "problem_seed": 0},
        algorithm=["local"],
        machines=[2],
        local_steps=[2],
        rounds=2,
        lr="fixed:0.05",
        seeds=[0],
    )
    cfg.update(overrides)
    return cfg


class TestMnistExperiment:
    def test_full_pipeline_on_synthetic_idx(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        write_idx_dir(data)
        spec = spec_from_dict(mnist_config())
        summary = mnist_experiment(spec, data_dir=data, out_dir=tmp_path / "out")
        assert summary.num_runs == 1

        rows = read_rows(summary.csv_path)
        assert len(rows) == 2
        assert rows[0]["run_id"] == "local-mnist-logistic-M2-K2-s0"
        assert all(math.isfinite(float(r["excess_loss"])) for r in rows)

        manifest = json.loads(summary.manifest_path.read_text())
        assert set(manifest) == {
            "spec", "csv_columns", "created_utc", "resolved_lr",
            "reference", "test_metrics", "package_version", "warnings",
        }
        ref = manifest["reference"]["M2"]
        assert ref["grad_norm"] <= 1e-4
        assert sum(ref["machine_sizes"]) == 60
        tm = manifest["test_metrics"]["local-mnist-logistic-M2-K2-s0"]
        assert 0.0 <= tm["test_accuracy"] <= 1.0
        assert tm["test_loss"] > 0.0

    def test_data_dir_is_required(self, tmp_path):
        spec = spec_from_dict(mnist_config())
        with pytest.raises(ConfigError, match="no MNIST directory"):
            mnist_experiment(spec, out_dir=tmp_path)

    def test_missing_idx_file(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        write_idx_dir(data)
        (data / "t10k-images-idx3-ubyte").unlink()
        spec = spec_from_dict(mnist_config())
        with pytest.raises(ConfigError, match="missing t10k-images"):
            mnist_experiment(spec, data_dir=data, out_dir=tmp_path / "out")

    def test_rejects_other_kinds(self, tmp_path):
        spec = spec_from_dict(base_config())
        with pytest.raises(ConfigError, match="mnist-logistic"):
            mnist_experiment(spec, data_dir=tmp_path, out_dir=tmp_path)


class TestShippedConfigs:
    def test_every_bundled_config_parses(self):
        from pathlib import Path

        configs = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.json"))
        assert configs, "no bundled configs found"
        for path in configs:
            spec = load_spec(path)
            assert spec.algorithms


class TestCli:
    def write_config(self, tmp_path, cfg):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        return str(path)

    def test_run_ok(self, tmp_path, capsys):
        path = self.write_config(tmp_path, base_config())
        code = cli.main(["run", "--config", path, "--out", str(tmp_path / "out")])
        assert code == 0
        out = capsys.readouterr().out
        assert "wrote 4 runs" in out
        assert (tmp_path / "out" / "runs.csv").exists()

    def test_sweep_ok(self, tmp_path):
        path = self.write_config(tmp_path, base_config(machines=[2, 3], rounds=3))
        assert cli.main(["sweep", "--config", path, "--out", str(tmp_path / "out")]) == 0

    def test_config_error_exits_2(self, tmp_path, capsys):
        path = self.write_config(tmp_path, base_config(momentum=0.9))
        assert cli.main(["run", "--config", path, "--out", str(tmp_path / "out")]) == 2
        assert "config error" in capsys.readouterr().err
        assert cli.main(["run", "--config", str(tmp_path / "nope.json")]) == 2

    def test_divergence_exits_1(self, tmp_path, capsys):
        cfg = base_config(algorithm=["local"], lr="fixed:10", seeds=[0], x0="ones:3")
        path = self.write_config(tmp_path, cfg)
        assert cli.main(["run", "--config", path, "--out", str(tmp_path / "out")]) == 1
        assert "diverged" in capsys.readouterr().err

    def test_all_diverged_grid_exits_1(self, tmp_path, capsys):
        cfg = base_config(algorithm=["local"], lr="grid:[1000000.0]",
                          seeds=[0], x0="ones:3")
        path = self.write_config(tmp_path, cfg)
        assert cli.main(["run", "--config", path, "--out", str(tmp_path / "out")]) == 1
        assert "divergence" in capsys.readouterr().err

    def test_mnist_without_data_exits_2(self, tmp_path):
        path = self.write_config(tmp_path, mnist_config())
        assert cli.main(["mnist", "--config", path, "--out", str(tmp_path / "out")]) == 2

    def test_verify_exits_0(self, capsys):
        assert cli.main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "all checks passed" in out
        assert "PASS" in out
