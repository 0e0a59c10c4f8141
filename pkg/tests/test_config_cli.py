import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbdropout import cli
from sbdropout.closedform import expected_objective_standard
from sbdropout.config import (ConfigError, ExperimentConfig, config_from_dict, config_to_dict,
                              config_to_json, parse_config)
from sbdropout.verification import VERIFY_REPORT_SCHEMA, run_verify

SMALL_LINEAR = {"model": "linear", "epochs": 3, "data": {"n_test": 100}}
SMALL_CNN = {"model": "text_cnn", "epochs": 2,
             "data": {"n_train": 40, "n_test": 40, "vocab_size": 48, "seq_len": 8}}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("{}")
        assert cfg.dropout.variant == "self_balanced"
        assert cfg.dropout.granularity == "per_feature"
        assert cfg.dropout.inference_mode == "passthrough"
        assert (cfg.optimizer.name, cfg.optimizer.lr, cfg.batch_size) == ("sgd", 0.03, 10)

    def test_model_defaults_for_cnn(self):
        cfg = parse_config('{"model": "text_cnn"}')
        assert (cfg.optimizer.name, cfg.optimizer.lr, cfg.batch_size) == ("adam", 0.01, 20)
        assert cfg.keep_probs() == (0.5, 0.5)

    def test_keep_prob_out_of_range_names_the_key(self):
        with pytest.raises(ConfigError, match=r"dropout\.keep_prob: must be in range \(0, 1\], got 1\.5"):
            parse_config('{"dropout": {"keep_prob": 1.5}}')

    @pytest.mark.parametrize("doc,key", [
        ({"dropout": {"keep_prob": 0}}, "dropout.keep_prob"),
        ({"epochs": 0}, "epochs"),
        ({"data": {"dim": 3}}, "data.dim"),
        ({"optimizer": {"lr": -0.1}}, "optimizer.lr"),
        ({"dropout": {"granularity": "token_vector"}}, "dropout.granularity"),
        ({"sweep": {"keep_prob": [0.5, 2.0]}}, r"sweep.keep_prob\[1\]"),
        ({"epochs": "ten"}, "epochs"),
        ({"data": {"decorrelate_test": 1}}, "data.decorrelate_test"),
        ({"seed": -1}, "seed"),
    ])
    def test_invalid_values(self, doc, key):
        with pytest.raises(ConfigError, match=key):
            config_from_dict(doc)

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="dropout.keep"):
            parse_config('{"dropout": {"keep": 0.5}}')
        with pytest.raises(ConfigError, match="learning_rate"):
            parse_config('{"learning_rate": 0.1}')

    def test_syntax_error_position(self):
        with pytest.raises(ConfigError, match=r"line 2, column 13"):
            parse_config('{\n  "epochs": ,\n}')

    def test_sweep_needs_grid(self):
        with pytest.raises(ConfigError, match="sweep.keep_prob"):
            config_from_dict({"task": "sweep"})

    def test_json_roundtrip(self):
        cfg = parse_config(json.dumps(SMALL_CNN))
        assert parse_config(config_to_json(cfg)) == cfg


@settings(max_examples=50, deadline=None)
@given(p=st.floats(0.01, 1.0), epochs=st.integers(1, 100), seed=st.integers(0, 2**64 - 1),
       variant=st.sampled_from(["standard", "self_balanced"]),
       rho=st.floats(0.0, 1.0), lr=st.floats(0.0, 1.0),
       grid=st.lists(st.floats(0.01, 1.0), max_size=4))
def test_config_roundtrip_property(p, epochs, seed, variant, rho, lr, grid):
    cfg = config_from_dict({"seed": seed, "epochs": epochs, "dropout": {"keep_prob": p, "variant": variant},
                            "data": {"rho": rho}, "optimizer": {"lr": lr}, "sweep": {"keep_prob": grid}})
    again = config_from_dict(json.loads(config_to_json(cfg)))
    assert again == cfg
    assert config_to_dict(again) == config_to_dict(cfg)


class TestTrainCommand:
    def test_one_epoch_csv(self, tmp_path):
        path = write_config(tmp_path, dict(SMALL_LINEAR, epochs=1))
        assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "out")]) == cli.EXIT_OK
        lines = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
        assert lines[0] == ",".join(cli.CSV_COLUMNS)
        assert len(lines) == 2 and lines[1].startswith("1,")
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["status"] == "ok" and summary["config"]["epochs"] == 1

    @pytest.mark.parametrize("doc", [SMALL_LINEAR, SMALL_CNN])
    def test_byte_identical_reruns(self, tmp_path, doc):
        path = write_config(tmp_path, doc)
        for out in ("a", "b"):
            assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / out)]) == 0
        for name in ("metrics.csv", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_override(self, tmp_path):
        path = write_config(tmp_path, SMALL_LINEAR)
        cli.main(["train", "--config", str(path), "--out", str(tmp_path / "a")])
        cli.main(["train", "--config", str(path), "--seed", "9", "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()
        assert json.loads((tmp_path / "b" / "summary.json").read_text())["config"]["seed"] == 9

    def test_bad_config_exit_code(self, tmp_path, caplog):
        path = write_config(tmp_path, {"dropout": {"keep_prob": 1.5}})
        assert cli.main(["train", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
        assert "keep_prob" in caplog.text

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG

    def test_task_conflict(self, tmp_path):
        path = write_config(tmp_path, dict(SMALL_LINEAR, task="sweep", sweep={"keep_prob": [0.5]}))
        assert cli.main(["train", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_CONFIG

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, tmp_path):
        path = write_config(tmp_path, dict(SMALL_LINEAR, epochs=30, optimizer={"lr": 50.0}))
        assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_DIVERGED
        assert json.loads((tmp_path / "o" / "summary.json").read_text())["status"] == "diverged"

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        path = write_config(tmp_path, SMALL_LINEAR)
        assert cli.main(["train", "--config", str(path), "--out", str(blocker / "sub")]) == cli.EXIT_IO


class TestSweepCommand:
    def test_single_cell_matches_train(self, tmp_path):
        doc = dict(SMALL_LINEAR, dropout={"keep_prob": 0.7})
        train_cfg = write_config(tmp_path, doc, "train.json")
        sweep_cfg = write_config(tmp_path, dict(doc, sweep={"keep_prob": [0.7]}), "sweep.json")
        assert cli.main(["train", "--config", str(train_cfg), "--out", str(tmp_path / "t")]) == 0
        assert cli.main(["sweep", "--config", str(sweep_cfg), "--out", str(tmp_path / "s")]) == 0
        assert ((tmp_path / "s" / "cell_000.csv").read_bytes()
                == (tmp_path / "t" / "metrics.csv").read_bytes())

    def test_grid_cells_reproduce_standalone(self, tmp_path):
        grid = {"keep_prob_input": [0.5, 0.8, 1.0], "keep_prob_hidden": [0.5, 0.8, 1.0]}
        path = write_config(tmp_path, dict(SMALL_CNN, sweep=grid))
        assert cli.main(["sweep", "--config", str(path), "--out", str(tmp_path / "s")]) == 0
        report = json.loads((tmp_path / "s" / "sweep.json").read_text())
        assert len(report["cells"]) == 9
        assert report["grid"] == grid
        cells = [(a, b) for a in grid["keep_prob_input"] for b in grid["keep_prob_hidden"]]
        for i in (0, 4, 8):
            p_in, p_hid = cells[i]
            doc = dict(SMALL_CNN, dropout={"keep_prob_input": p_in, "keep_prob_hidden": p_hid})
            cfg = write_config(tmp_path, doc, f"cell{i}.json")
            assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / f"c{i}")]) == 0
            assert ((tmp_path / f"c{i}" / "metrics.csv").read_bytes()
                    == (tmp_path / "s" / f"cell_{i:03d}.csv").read_bytes())

    def test_keep_all_cell_has_no_mask_movement(self, tmp_path):
        path = write_config(tmp_path, dict(SMALL_LINEAR, sweep={"keep_prob": [1.0]}))
        assert cli.main(["sweep", "--config", str(path), "--out", str(tmp_path / "s")]) == 0
        final = json.loads((tmp_path / "s" / "sweep.json").read_text())["cells"][0]["final"]
        assert final["norm_x_mask"] == 0.0

    def test_parallel_output_is_identical(self, tmp_path):
        path = write_config(tmp_path, dict(SMALL_LINEAR, sweep={"keep_prob": [0.5, 0.9]}))
        for n in ("1", "2"):
            assert cli.main(["sweep", "--config", str(path), "--parallel", n,
                             "--out", str(tmp_path / n)]) == 0
        for name in ("cell_000.csv", "cell_001.csv"):
            assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "2" / name).read_bytes()
        assert (tmp_path / "1" / "sweep.json").read_bytes() == (tmp_path / "2" / "sweep.json").read_bytes()


class TestOtherCommands:
    def test_mc(self, tmp_path):
        path = write_config(tmp_path, {"mc": {"instances": 4, "samples": 5000}})
        assert cli.main(["mc", "--config", str(path), "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "mc.json").read_text())
        assert len(report["instances"]) == 4 and report["passed"]

    def test_compare(self, tmp_path):
        path = write_config(tmp_path, dict(SMALL_LINEAR, compare={"n_seeds": 3}))
        assert cli.main(["compare", "--config", str(path), "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "compare.json").read_text())
        assert report["seeds"] == [0, 1, 2]
        diffs = np.array(report["test_loss"]["self_balanced"]) - np.array(report["test_loss"]["standard"])
        np.testing.assert_allclose(report["paired_differences"], diffs, rtol=0, atol=0)


@pytest.fixture(scope="module")
def report():
    return run_verify(mc_samples=20_000)


class TestVerify:
    def test_schema(self, report):
        jsonschema.validate(report, VERIFY_REPORT_SCHEMA)

    def test_all_required_checks_pass(self, report):
        assert report["passed"]
        failed = [c["name"] for c in report["checks"] if c["must_pass"] and not c["passed"]]
        assert failed == []

    def test_literature_gap_is_informational(self, report):
        by_name = {c["name"]: c for c in report["checks"]}
        assert not by_name["literature_decomposition_gap"]["must_pass"]
        assert by_name["literature_decomposition_p1_gap_is_norm_y_squared"]["passed"]

    def test_perturbed_objective_turns_red(self):
        def broken(inst):
            return expected_objective_standard(inst) * (1 + 1e-6)

        report = run_verify({"expected_objective_standard": broken}, mc_samples=2000)
        by_name = {c["name"]: c for c in report["checks"]}
        assert not report["passed"]
        red = [c["name"] for c in report["checks"] if c["must_pass"] and not c["passed"]]
        assert red and all("standard" in name for name in red)
        assert by_name[red[0]]["measured"] > by_name[red[0]]["tolerance"]

    def test_unknown_override(self):
        with pytest.raises(KeyError):
            run_verify({"nope": lambda inst: 0.0})

    def test_cli_exit_codes(self, tmp_path, monkeypatch, capsys):
        assert cli.main(["verify", "--out", str(tmp_path)]) == cli.EXIT_OK
        jsonschema.validate(json.loads((tmp_path / "verify.json").read_text()), VERIFY_REPORT_SCHEMA)
        assert "[PASS]" in capsys.readouterr().err
        monkeypatch.setattr(cli, "run_verify", lambda: {"passed": False, "checks": []})
        assert cli.main(["verify", "--out", str(tmp_path / "x")]) == cli.EXIT_VERIFY_FAILED

    def test_report_is_deterministic(self, tmp_path):
        for d in ("a", "b"):
            cli.main(["verify", "--out", str(tmp_path / d)])
        assert (tmp_path / "a" / "verify.json").read_bytes() == (tmp_path / "b" / "verify.json").read_bytes()
