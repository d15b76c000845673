"""Tests for config parsing, hashing, ablation plumbing, and the bind CLI.

CLI tests call main(argv) in-process and write only under tmp dirs; the one
training run they need is shared through a module-scoped fixture.
"""

import json
import time
from importlib import resources
from pathlib import Path

import pytest

import modbind.ablation as ablation_mod
from modbind.ablation import (
    format_axis_value,
    run_ablation_suite,
    summarize,
    write_long_csv,
    write_summary_csv,
)
from modbind.cli import main
from modbind.config import (
    ABLATION_AXES,
    DEFAULT_GRIDS,
    ConfigError,
    apply_axis,
    parse_ablation_suite,
    parse_experiment_config,
)
from modbind.report import MetricsReport

from .conftest import small_config_document


class TestConfigValidation:
    def test_parse_and_renormalize_is_idempotent(self, small_config_doc):
        cfg = parse_experiment_config(small_config_doc)
        again = parse_experiment_config(cfg.normalized)
        assert again.normalized == cfg.normalized
        assert cfg.seed == 3
        assert cfg.output_dir == "runs/test"

    def test_unknown_key_rejected_with_path(self, small_config_doc):
        small_config_doc["train"]["bogus"] = 1
        with pytest.raises(ConfigError, match=r"config\.train\.bogus"):
            parse_experiment_config(small_config_doc)

    def test_unknown_top_level_key_rejected(self, small_config_doc):
        small_config_doc["extra"] = {}
        with pytest.raises(ConfigError, match=r"config\.extra"):
            parse_experiment_config(small_config_doc)

    def test_missing_field_names_path(self, small_config_doc):
        del small_config_doc["train"]["epochs"]
        with pytest.raises(ConfigError, match=r"config\.train\.epochs.*missing"):
            parse_experiment_config(small_config_doc)

    def test_exactly_one_hub_required(self, small_config_doc):
        small_config_doc["world"]["modalities"][1]["hub"] = True
        with pytest.raises(ConfigError, match="exactly one hub"):
            parse_experiment_config(small_config_doc)
        for m in small_config_doc["world"]["modalities"]:
            m["hub"] = False
        with pytest.raises(ConfigError, match="exactly one hub"):
            parse_experiment_config(small_config_doc)

    def test_arch_for_unknown_modality_rejected(self, small_config_doc):
        small_config_doc["archs"]["gamma"] = {"hidden_widths": [8], "embed_dim": 6}
        with pytest.raises(ConfigError, match=r"config\.archs\.gamma"):
            parse_experiment_config(small_config_doc)

    def test_missing_arch_rejected(self, small_config_doc):
        del small_config_doc["archs"]["beta"]
        with pytest.raises(ConfigError, match=r"config\.archs\.beta"):
            parse_experiment_config(small_config_doc)

    def test_mismatched_embed_dims_rejected(self, small_config_doc):
        small_config_doc["archs"]["beta"]["embed_dim"] = 7
        with pytest.raises(ConfigError, match="share one embed_dim"):
            parse_experiment_config(small_config_doc)

    def test_hub_as_pair_spoke_rejected(self, small_config_doc):
        small_config_doc["train"]["pairs"][0]["spoke"] = "hub"
        with pytest.raises(ConfigError, match="must not be the hub"):
            parse_experiment_config(small_config_doc)

    def test_unknown_modality_in_eval_pair_rejected(self, small_config_doc):
        small_config_doc["eval"]["emergent_pairs"] = [["alpha", "gamma"]]
        with pytest.raises(ConfigError, match=r"config\.eval\.emergent_pairs\[0\]"):
            parse_experiment_config(small_config_doc)

    def test_k_beyond_index_size_rejected(self, small_config_doc):
        small_config_doc["eval"]["k_list"] = [1, 31]
        with pytest.raises(ConfigError, match="exceeds retrieval_index_size"):
            parse_experiment_config(small_config_doc)

    def test_bool_is_not_an_integer(self, small_config_doc):
        small_config_doc["train"]["epochs"] = True
        with pytest.raises(ConfigError, match="expected an integer"):
            parse_experiment_config(small_config_doc)

    def test_negative_seed_rejected(self, small_config_doc):
        small_config_doc["seed"] = -1
        with pytest.raises(ConfigError, match=r"config\.seed"):
            parse_experiment_config(small_config_doc)

    def test_bad_temperature_mode_rejected(self, small_config_doc):
        small_config_doc["train"]["pairs"][0]["temperature"] = {"mode": "magic", "value": 0.07}
        with pytest.raises(ConfigError, match="must be one of"):
            parse_experiment_config(small_config_doc)

    def test_error_carries_path_attribute(self, small_config_doc):
        small_config_doc["train"]["bogus"] = 1
        with pytest.raises(ConfigError) as exc:
            parse_experiment_config(small_config_doc)
        assert exc.value.path == "config.train.bogus"


class TestConfigHash:
    def test_stable_across_parses(self, small_config_doc):
        a = parse_experiment_config(small_config_doc)
        b = parse_experiment_config(small_config_document())
        assert a.hash == b.hash

    def test_seed_excluded_from_hash(self, small_config_doc):
        cfg = parse_experiment_config(small_config_doc)
        reseeded = cfg.with_seed(99)
        assert reseeded.hash == cfg.hash
        assert reseeded.seed == 99
        assert reseeded.train.seed == 99

    def test_output_dir_excluded_from_hash(self, small_config_doc):
        a = parse_experiment_config(small_config_doc)
        small_config_doc["output_dir"] = "elsewhere"
        b = parse_experiment_config(small_config_doc)
        assert a.hash == b.hash

    def test_material_change_alters_hash(self, small_config_doc):
        a = parse_experiment_config(small_config_doc)
        small_config_doc["train"]["epochs"] = 3
        b = parse_experiment_config(small_config_doc)
        assert a.hash != b.hash


class TestApplyAxis:
    @pytest.fixture
    def base(self, small_config_doc):
        return parse_experiment_config(small_config_doc).normalized

    def test_temperature_learnable(self, base):
        doc = apply_axis(base, "temperature", "learnable")
        for pair in doc["train"]["pairs"]:
            assert pair["temperature"] == {"mode": "learnable", "value": 0.07}

    def test_temperature_fixed_value(self, base):
        doc = apply_axis(base, "temperature", 0.2)
        for pair in doc["train"]["pairs"]:
            assert pair["temperature"] == {"mode": "fixed", "value": 0.2}

    def test_projection_head(self, base):
        doc = apply_axis(base, "projection_head", "mlp")
        assert all(a["head"] == "mlp" for a in doc["archs"].values())

    def test_epochs(self, base):
        assert apply_axis(base, "epochs", 5)["train"]["epochs"] == 5

    def test_batch_size(self, base):
        doc = apply_axis(base, "batch_size", 256)
        assert all(p["batch_size"] == 256 for p in doc["train"]["pairs"])

    def test_hub_capacity_touches_only_hub(self, base):
        doc = apply_axis(base, "hub_capacity", 64)
        assert doc["archs"]["hub"]["hidden_widths"] == [64]
        assert doc["archs"]["alpha"] == base["archs"]["alpha"]

    def test_noise_strength_scales_every_modality(self, base):
        doc = apply_axis(base, "noise_strength", 2.0)
        for before, after in zip(base["world"]["modalities"], doc["world"]["modalities"]):
            assert after["obs_noise_scale"] == 2.0 * before["obs_noise_scale"]

    def test_alignment(self, base):
        assert all(
            not p["aligned"]
            for p in apply_axis(base, "alignment", "class_only")["train"]["pairs"]
        )
        assert all(
            p["aligned"] for p in apply_axis(base, "alignment", "aligned")["train"]["pairs"]
        )

    def test_loss_mix(self, base):
        doc = apply_axis(base, "loss_mix", [0.0, 1.0])
        for pair in doc["train"]["pairs"]:
            assert pair["infonce_weight"] == 0.0
            assert pair["l2_weight"] == 1.0

    def test_base_document_not_mutated(self, base):
        snapshot = json.loads(json.dumps(base))
        apply_axis(base, "noise_strength", 2.0)
        assert base == snapshot

    def test_unknown_axis_rejected(self, base):
        with pytest.raises(ConfigError):
            apply_axis(base, "sorcery", 1)

    @pytest.mark.parametrize("axis", ABLATION_AXES)
    def test_every_axis_yields_a_valid_config(self, base, axis):
        doc = apply_axis(base, axis, DEFAULT_GRIDS[axis][0])
        parse_experiment_config(doc)


class TestAblationSuite:
    def test_defaults_cover_all_axes(self, small_config_doc):
        suite = parse_ablation_suite({"base": small_config_doc})
        assert tuple(a.axis for a in suite.axes) == ABLATION_AXES
        for spec in suite.axes:
            assert spec.grid == DEFAULT_GRIDS[spec.axis]
        assert suite.seeds == [3]

    def test_temperature_default_grid_pinned(self, small_config_doc):
        suite = parse_ablation_suite({"base": small_config_doc})
        grid = next(a.grid for a in suite.axes if a.axis == "temperature")
        assert grid == ["learnable", 0.05, 0.07, 0.2, 1.0]

    def test_explicit_axes_subset(self, small_config_doc):
        suite = parse_ablation_suite(
            {"base": small_config_doc, "axes": [{"axis": "epochs", "grid": [1, 2]}], "seeds": [0, 1]}
        )
        assert [a.axis for a in suite.axes] == ["epochs"]
        assert suite.axes[0].grid == [1, 2]
        assert suite.seeds == [0, 1]

    def test_unknown_axis_rejected(self, small_config_doc):
        with pytest.raises(ConfigError, match="must be one of"):
            parse_ablation_suite({"base": small_config_doc, "axes": [{"axis": "sorcery"}]})

    def test_bad_grid_value_rejected(self, small_config_doc):
        with pytest.raises(ConfigError, match=r"axes\[0\]\.grid\[0\]"):
            parse_ablation_suite(
                {"base": small_config_doc, "axes": [{"axis": "batch_size", "grid": [0]}]}
            )

    def test_format_axis_value(self):
        assert format_axis_value("learnable") == "learnable"
        assert format_axis_value(0.05) == "0.05"
        assert format_axis_value([1.0, 0.0]) == "[1.0,0.0]"

    def test_failed_cell_does_not_end_suite(self, small_config_doc, monkeypatch, tmp_path):
        suite = parse_ablation_suite(
            {"base": small_config_doc, "axes": [{"axis": "epochs", "grid": [1, 2]}], "seeds": [0]}
        )
        real_run_cell = ablation_mod.run_cell

        def flaky(base_normalized, axis, value, seed):
            if value == 1:
                raise ValueError("boom")
            return real_run_cell(base_normalized, axis, value, seed)

        monkeypatch.setattr(ablation_mod, "run_cell", flaky)
        results = run_ablation_suite(suite)
        assert [r.status for r in results] == ["error", "ok"]
        assert "boom" in results[0].error
        assert results[1].metrics

        long_path = tmp_path / "long.csv"
        write_long_csv(results, long_path, "deadbeef")
        lines = long_path.read_text().splitlines()
        assert lines[0] == "# base_config_hash=deadbeef"
        assert any(",error," in line for line in lines)

        rows = summarize(results)
        assert all(row["value"] == "2" for row in rows)
        summary_path = tmp_path / "summary.csv"
        write_summary_csv(rows, summary_path, "deadbeef")
        assert summary_path.read_text().startswith("# base_config_hash=deadbeef")

    def test_cells_are_deterministic(self, small_config_doc):
        suite = parse_ablation_suite(
            {"base": small_config_doc, "axes": [{"axis": "epochs", "grid": [1]}], "seeds": [0]}
        )
        first = run_ablation_suite(suite)
        second = run_ablation_suite(suite)
        assert [r.metrics for r in first] == [r.metrics for r in second]
        assert all(r.status == "ok" for r in first)

    def test_epochs_axis_improves_while_undertrained(self):
        # more epochs helps only up to convergence; the desk defaults already
        # converge by ~5 epochs (and drift slightly past the peak after), so
        # the trend grid has to stay below that
        base = json.loads(
            resources.files("modbind").joinpath("configs", "desk.json").read_text()
        )
        suite = parse_ablation_suite(
            {"base": base, "axes": [{"axis": "epochs", "grid": [1, 2, 5]}], "seeds": [0, 1]}
        )
        rows = summarize(run_ablation_suite(suite))
        means = {
            int(r["value"]): r["mean"]
            for r in rows
            if r["metric"] == "emergent_zero_shot/spoke1_vs_textlike"
        }
        assert means[2] >= means[1] - 0.01
        assert means[5] >= means[2] - 0.01


@pytest.fixture(scope="module")
def cli_space(tmp_path_factory):
    """One trained checkpoint shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(small_config_document()))
    out = root / "train"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    return root, cfg_path, out


class TestCliTrain:
    def test_artifacts_written(self, cli_space):
        _, cfg_path, out = cli_space
        for name in ("checkpoint.json", "train_log.csv", "run_manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "run_manifest.json").read_text())
        cfg = parse_experiment_config(json.loads(cfg_path.read_text()))
        assert manifest["config_hash"] == cfg.hash
        assert manifest["command"] == "train"
        assert (out / "train_log.csv").read_text().startswith(f"# config_hash={cfg.hash}")

    def test_rerun_is_byte_identical(self, cli_space, tmp_path):
        _, cfg_path, out = cli_space
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
        for name in ("checkpoint.json", "train_log.csv"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()

    def test_seed_override_changes_realization_not_hash(self, cli_space, tmp_path):
        _, cfg_path, out = cli_space
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path), "--seed", "9"]) == 0
        base_manifest = json.loads((out / "run_manifest.json").read_text())
        manifest = json.loads((tmp_path / "run_manifest.json").read_text())
        assert manifest["config_hash"] == base_manifest["config_hash"]
        assert manifest["seed"] == 9
        assert (tmp_path / "checkpoint.json").read_bytes() != (out / "checkpoint.json").read_bytes()

    def test_input_config_not_mutated(self, cli_space, tmp_path):
        _, cfg_path, _ = cli_space
        before = cfg_path.read_bytes()
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
        assert cfg_path.read_bytes() == before

    def test_default_output_dir_comes_from_config(self, tmp_path, monkeypatch):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(small_config_document()))
        monkeypatch.chdir(tmp_path)
        assert main(["train", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "runs/test/checkpoint.json").exists()


class TestCliEval:
    def test_report_written_with_hash(self, cli_space, tmp_path):
        _, cfg_path, out = cli_space
        code = main(
            ["eval", "--config", str(cfg_path), "--checkpoint", str(out / "checkpoint.json"),
             "--out", str(tmp_path)]
        )
        assert code == 0
        report = MetricsReport.from_json((tmp_path / "metrics.json").read_text())
        cfg = parse_experiment_config(json.loads(cfg_path.read_text()))
        assert report.config_hash == cfg.hash
        assert report.flags["emergent/alpha_vs_beta"] is True
        assert (tmp_path / "metrics.csv").read_text().startswith(f"# config_hash={cfg.hash}")

    def test_rerun_is_byte_identical(self, cli_space, tmp_path):
        _, cfg_path, out = cli_space
        args = ["eval", "--config", str(cfg_path), "--checkpoint", str(out / "checkpoint.json")]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a/metrics.json").read_bytes() == (tmp_path / "b/metrics.json").read_bytes()

    def test_fresh_init_when_no_checkpoint(self, cli_space, tmp_path):
        _, cfg_path, _ = cli_space
        assert main(["eval", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
        report = MetricsReport.from_json((tmp_path / "metrics.json").read_text())
        assert "emergent_zero_shot/alpha_vs_beta" in report.metrics

    def test_checkpoint_config_mismatch_is_config_error(self, cli_space, tmp_path, capsys):
        _, cfg_path, out = cli_space
        doc = json.loads(cfg_path.read_text())
        doc["train"]["epochs"] += 1
        other = tmp_path / "other.json"
        other.write_text(json.dumps(doc))
        code = main(
            ["eval", "--config", str(other), "--checkpoint", str(out / "checkpoint.json"),
             "--out", str(tmp_path)]
        )
        assert code == 2
        assert "config_hash does not match" in capsys.readouterr().err


class TestCliRetrieve:
    def test_self_retrieval_ranks_query_first(self, cli_space, capsys):
        _, cfg_path, out = cli_space
        code = main(
            ["retrieve", "--config", str(cfg_path), "--checkpoint", str(out / "checkpoint.json"),
             "--index-modality", "alpha", "--query-modality", "alpha", "--query-id", "2", "--k", "3"]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "rank,id,similarity"
        assert len(lines) == 4
        rank, item, sim = lines[1].split(",")
        assert (rank, item) == ("1", "2")
        assert abs(float(sim) - 1.0) <= 1e-9

    def test_compose_endpoint_equals_plain_query(self, cli_space, capsys):
        _, cfg_path, out = cli_space
        common = ["retrieve", "--config", str(cfg_path), "--checkpoint", str(out / "checkpoint.json"),
                  "--index-modality", "hub", "--query-id", "4", "--k", "5"]
        assert main(common + ["--query-modality", "alpha"]) == 0
        plain = capsys.readouterr().out
        assert main(common + ["--compose", "alpha+beta", "--compose-weight", "1.0"]) == 0
        composed = capsys.readouterr().out
        assert composed == plain

    def test_compose_midpoint_runs(self, cli_space, capsys):
        _, cfg_path, out = cli_space
        code = main(
            ["retrieve", "--config", str(cfg_path), "--checkpoint", str(out / "checkpoint.json"),
             "--index-modality", "hub", "--compose", "alpha+beta", "--query-id", "0", "--k", "5"]
        )
        assert code == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 6

    def test_malformed_compose_rejected(self, cli_space, capsys):
        _, cfg_path, out = cli_space
        code = main(
            ["retrieve", "--config", str(cfg_path), "--checkpoint", str(out / "checkpoint.json"),
             "--index-modality", "hub", "--compose", "alpha+beta+hub"]
        )
        assert code == 2
        capsys.readouterr()

    def test_query_modality_or_compose_required(self, cli_space, capsys):
        _, cfg_path, out = cli_space
        code = main(
            ["retrieve", "--config", str(cfg_path), "--checkpoint", str(out / "checkpoint.json"),
             "--index-modality", "hub"]
        )
        assert code == 2
        assert "--query-modality" in capsys.readouterr().err

    def test_query_id_out_of_range_rejected(self, cli_space, capsys):
        _, cfg_path, out = cli_space
        code = main(
            ["retrieve", "--config", str(cfg_path), "--checkpoint", str(out / "checkpoint.json"),
             "--index-modality", "hub", "--query-modality", "alpha", "--query-id", "99"]
        )
        assert code == 2
        capsys.readouterr()


class TestCliWorldgenAndErrors:
    def test_worldgen_embeds_config_hash(self, cli_space, tmp_path):
        _, cfg_path, _ = cli_space
        assert main(["worldgen", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "world.json").read_text())
        assert doc["kind"] == "world"
        cfg = parse_experiment_config(json.loads(cfg_path.read_text()))
        assert doc["config_hash"] == cfg.hash

    def test_bundled_config_name_resolves(self, tmp_path):
        assert main(["worldgen", "--config", "desk.json", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "world.json").exists()

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        doc = small_config_document()
        del doc["train"]["epochs"]
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps(doc))
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path)]) == 2
        assert "config.train.epochs" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exits_3(self, tmp_path, capsys):
        doc = small_config_document()
        doc["train"]["learning_rate"] = 1e18
        doc["train"]["warmup_epochs"] = 0.0
        cfg_path = tmp_path / "diverge.json"
        cfg_path.write_text(json.dumps(doc))
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path)]) == 3
        assert "non-finite loss" in capsys.readouterr().err

    def test_missing_config_file_exits_4(self, tmp_path, capsys):
        code = main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
        assert code == 4
        assert "not found" in capsys.readouterr().err

    def test_ablate_runs_explicit_axes(self, tmp_path, capsys):
        suite_doc = {
            "base": small_config_document(),
            "axes": [{"axis": "epochs", "grid": [1, 2]}],
            "seeds": [0],
        }
        suite_path = tmp_path / "suite.json"
        suite_path.write_text(json.dumps(suite_doc))
        assert main(["ablate", "--config", str(suite_path), "--out", str(tmp_path)]) == 0
        capsys.readouterr()
        long_lines = (tmp_path / "ablation_long.csv").read_text().splitlines()
        assert long_lines[1] == "axis,value,seed,status,config_hash,metric,metric_value"
        assert (tmp_path / "ablation_summary.csv").exists()
        manifest = json.loads((tmp_path / "ablate_manifest.json").read_text())
        assert manifest["cells"] == 2
        assert manifest["failures"] == 0


class TestCliDeskBudget:
    def test_all_subcommands_fit_the_time_budget(self, tmp_path, capsys):
        # whole tour of the bundled configs must stay under five minutes
        start = time.perf_counter()
        assert main(["worldgen", "--config", "desk.json", "--out", str(tmp_path / "w")]) == 0
        assert main(["train", "--config", "desk.json", "--out", str(tmp_path / "t")]) == 0
        ckpt = str(tmp_path / "t" / "checkpoint.json")
        code = main(
            ["eval", "--config", "desk.json", "--checkpoint", ckpt, "--out", str(tmp_path / "e")]
        )
        assert code == 0
        code = main(
            ["retrieve", "--config", "desk.json", "--checkpoint", ckpt,
             "--index-modality", "hub", "--compose", "textlike+spoke1", "--query-id", "0", "--k", "5"]
        )
        assert code == 0
        assert main(["ablate", "--config", "ablate_quick.json", "--out", str(tmp_path / "a")]) == 0
        elapsed = time.perf_counter() - start
        capsys.readouterr()
        assert elapsed < 300.0
