"""End-to-end command-line flow on a micro run, plus exit-code paths."""

import json
import os

import numpy as np
import pytest

from mfasr import dataio
from mfasr.cli import main
from mfasr.pipeline import RunConfig


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    train = root / "train"
    val = root / "val"
    pairs = dataio.synth_dataset(31, 6, 16, 2)
    dataio.write_dataset(pairs[:4], train)
    dataio.write_dataset(pairs[4:], val)
    cfg = RunConfig(
        run_dir=str(root / "run"), dataset_dir=str(train), val_dir=str(val),
        scale=2, choices=(6, 4), cfabs_per_mfam=1,
        teacher_g_width=8, teacher_d_base=6, student_d_base=4,
        batch=2, patch_hr=8, seed=2, scale_factor=1,
        pretrain_iters=3, gan_iters=2, distill_iters=2,
        supernet_iters=3, finetune_iters=2,
        val_images=2, search_population=6, search_generations=2,
        search_elite_k=2, adv_weight=0.5, latency_budget_us=1e9)
    cfg_path = root / "config.json"
    cfg_path.write_text(cfg.to_json() + "\n")
    return {"cfg": cfg, "config": str(cfg_path), "root": root}


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert capsys.readouterr().out.strip()


def test_missing_required_flags_is_config_error(capsys):
    assert main(["pretrain"]) == 2
    err = capsys.readouterr().err
    assert "config error" in err


def test_stage_out_of_order_is_pipeline_error(cli_env, capsys):
    assert main(["train-gan", "--config", cli_env["config"]]) == 3
    err = capsys.readouterr().err
    assert "missing artifact" in err


def test_unknown_config_key_is_config_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"run_dir": "r", "dataset_dir": "d", "momentum": 0.9}')
    assert main(["pretrain", "--config", str(p)]) == 2
    assert "momentum" in capsys.readouterr().err


def test_divergence_exit_code(cli_env, tmp_path, capsys):
    doc = json.loads(open(cli_env["config"]).read())
    doc["run_dir"] = str(tmp_path / "diverge")
    doc["pretrain_lr"] = 1e8
    doc["pretrain_iters"] = 4
    p = tmp_path / "hot.json"
    p.write_text(json.dumps(doc))
    with np.errstate(all="ignore"):
        code = main(["pretrain", "--config", str(p)])
    assert code == 4
    err = capsys.readouterr().err
    assert "divergence" in err
    assert "loss_total" in err  # diagnostics are printed as JSON


def test_full_chain_via_cli(cli_env, capsys):
    cfgfile = cli_env["config"]
    cfg = cli_env["cfg"]
    for cmd in ("pretrain", "train-gan", "distill", "train-supernet"):
        assert main([cmd, "--config", cfgfile]) == 0, cmd
        out = capsys.readouterr().out
        assert "wrote" in out and "iterations done" in out

    assert main(["profile-latency", "--config", cfgfile, "--mode", "flops"]) == 0
    out = capsys.readouterr().out
    assert "operator entries" in out
    assert os.path.exists(os.path.join(cfg.run_dir, "artifacts", "lut.json"))

    assert main(["search", "--config", cfgfile]) == 0
    out = capsys.readouterr().out
    assert "best genotype" in out
    geno = json.load(open(os.path.join(cfg.run_dir, "artifacts",
                                       "genotype.json")))
    assert len(geno["genes"]) == 8

    assert main(["finetune", "--config", cfgfile]) == 0
    capsys.readouterr()

    out_dir = os.path.join(cfg.run_dir, "evalout")
    assert main(["eval", "--config", cfgfile, "--out", out_dir]) == 0
    out = capsys.readouterr().out
    assert "mean" in out
    assert os.path.exists(os.path.join(out_dir, "eval.csv"))
    assert os.path.exists(os.path.join(out_dir, "eval.png"))

    exp = os.path.join(cfg.run_dir, "exported")
    assert main(["export", "--config", cfgfile, "--out", exp]) == 0
    capsys.readouterr()
    assert os.path.exists(os.path.join(exp, "generator.mfaw"))
    assert os.path.exists(os.path.join(exp, "generator.graph.json"))

    assert main(["report", "--config", cfgfile]) == 0
    out = capsys.readouterr().out
    rep_dir = os.path.join(cfg.run_dir, "report")
    names = sorted(os.listdir(rep_dir))
    # every jsonl log is rendered to a CSV + PNG pair
    for stage in ("pretrain_l1", "train_gan_large", "distill_gd",
                  "train_supernet", "finetune"):
        assert f"{stage}_metrics.csv" in names, stage
        assert f"{stage}_loss.png" in names, stage
    assert "search_history.csv" in names
    assert "search_history.png" in names
    assert "wrote" in out


def test_iters_flag_overrides_stage_length(cli_env, tmp_path, capsys):
    doc = json.loads(open(cli_env["config"]).read())
    doc["run_dir"] = str(tmp_path / "itr")
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert main(["pretrain", "--config", str(p), "--iters", "2"]) == 0
    out = capsys.readouterr().out
    assert "2 iterations done" in out
    recs = [json.loads(l) for l in
            open(os.path.join(doc["run_dir"], "logs", "pretrain_l1.jsonl"))]
    assert len(recs) == 2


def test_cost_report_variants(tmp_path, capsys):
    assert main(["cost-report", "--width", "6", "--hw", "8",
                 "--scale", "2"]) == 0
    out = capsys.readouterr().out
    assert "TOTAL" in out
    totals = json.loads(out[out.index("{"):])
    assert totals["params"] > 0 and totals["flops"] > 0

    out_dir = tmp_path / "cost"
    assert main(["cost-report", "--genes", "6,4,4,6,4,6,6,4", "--hw", "8",
                 "--scale", "2", "--out", str(out_dir)]) == 0
    capsys.readouterr()
    for name in ("cost.json", "cost.csv", "cost.png"):
        assert (out_dir / name).exists()

    assert main(["cost-report", "--genes", "6,4"]) == 2
    assert "8 genes" in capsys.readouterr().err

    assert main(["cost-report"]) == 2
    assert "required" in capsys.readouterr().err


def test_eval_without_weights_is_pipeline_error(cli_env, tmp_path, capsys):
    doc = json.loads(open(cli_env["config"]).read())
    doc["run_dir"] = str(tmp_path / "fresh")
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert main(["eval", "--config", str(p)]) == 3
    assert "finetune" in capsys.readouterr().err
