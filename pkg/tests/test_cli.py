import json

import numpy as np
import pytest
from helpers import TINY, randomize, tiny_model

from spritediff.checkpoint import Checkpoint, model_checkpoint
from spritediff.cli import EXIT_CODES, main
from spritediff.ppm import read_ppm
from spritediff.sprites import gen_dataset
from spritediff.trainer import TrainConfig, pretrain_base


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    m = tiny_model()
    randomize(m, ["unet.", "text.", "encoder.adapter"], scale=0.05, seed=1)
    p = tmp_path_factory.mktemp("ck") / "tiny.ckpt"
    model_checkpoint(m, "se_pretrain").save(p)
    return p


@pytest.fixture(scope="module")
def ref(tmp_path_factory):
    p = tmp_path_factory.mktemp("ref") / "ref.ppm"
    assert main(["render", "--identity", "star,red,dots", "--seed", "3", "--out", str(p)]) == 0
    return p


def _ref_flags(ref):
    return ["--ref-image", str(ref), "--ref-mask", str(ref.with_name("ref.mask.ppm")), "--ref-caption", "a red star with dots"]


def _err(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("error: ")
    return lines[0].split(": ")[1]


def test_generate_twice_is_byte_identical(tmp_path, ckpt, ref):
    args = ["generate", "--ckpt", str(ckpt), "--prompt", "a star on sand", "--steps", "2", "--n", "2", "--seed", "7"]
    assert main(args + _ref_flags(ref) + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + _ref_flags(ref) + ["--out", str(tmp_path / "b")]) == 0
    for name in ("img_000007.ppm", "img_000008.ppm", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config"]["steps"] == 2 and man["config"]["omega_ref"] == 2.5 and man["config"]["beta"] == 0.2


def test_config_precedence(tmp_path, ckpt):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"generate": {"steps": 3, "beta": 0.4, "omega_c": 2.0}}))
    base = ["generate", "--ckpt", str(ckpt), "--prompt", "a star", "--n", "1", "--no-ref", "--config", str(cfg)]
    assert main(base + ["--beta", "0.1", "--out", str(tmp_path / "o")]) == 0
    got = json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]
    assert got["steps"] == 3  # file beats preset
    assert got["beta"] == 0.1  # flag beats file
    assert got["omega_c"] == 2.0 and got["omega_ref"] == 2.5  # file, preset


def test_natural_preset(tmp_path, ckpt):
    out = tmp_path / "o"
    main(["generate", "--ckpt", str(ckpt), "--prompt", "a star", "--n", "1", "--steps", "1", "--preset", "natural", "--out", str(out)])
    assert json.loads((out / "manifest.json").read_text())["config"]["omega_ref"] == 3.0


def test_eval_on_ground_truth_scores_one(tmp_path, capsys):
    d = tmp_path / "data"
    assert main(["make-dataset", "--n", "6", "--seed", "2", "--out", str(d)]) == 0
    capsys.readouterr()
    assert main(["eval", str(d)]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["n"] == 6 and result["prompt_score"] == 1.0


def test_eval_identity_with_reference(tmp_path, ckpt, ref, capsys):
    out = tmp_path / "g"
    main(["generate", "--ckpt", str(ckpt), "--prompt", "a star", "--n", "2", "--steps", "1", "--out", str(out)] + _ref_flags(ref))
    capsys.readouterr()
    assert main(["eval", str(out), "--ckpt", str(ckpt)]) == 0
    result = json.loads(capsys.readouterr().out)
    assert -1.0 <= result["identity_score"] <= 1.0


def test_dataset_env_var(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SPRITEDIFF_DATA", str(tmp_path / "env"))
    assert main(["make-dataset", "--n", "2"]) == 0
    assert (tmp_path / "env" / "manifest.json").is_file()
    man = json.loads((tmp_path / "env" / "manifest.json").read_text())
    assert man["config"] == {"n": 2, "seed": 0, "exclude_held_out": True}


def test_training_pipeline_and_resume(tmp_path, ref, monkeypatch):
    monkeypatch.setenv("SPRITEDIFF_DATA", "")
    base = tmp_path / "base.ckpt"
    # the CLI's model presets are slow to train, so the tiny base comes from the library
    cfg = TrainConfig("base", steps=1, batch=2, lr_main=1e-3)
    pretrain_base(gen_dataset(4, 0), cfg, model_cfg=TINY).checkpoint(cfg).save(base)
    se = tmp_path / "se.ckpt"
    common = ["--data-size", "4", "--batch", "2", "--log-every", "1000"]
    assert main(["train-se", "--base", str(base), "--steps", "2", "--out", str(se)] + common) == 0
    se_half = tmp_path / "se1.ckpt"
    assert main(["train-se", "--base", str(base), "--steps", "1", "--out", str(se_half)] + common) == 0
    se_resumed = tmp_path / "se2.ckpt"
    assert main(["train-se", "--resume", str(se_half), "--steps", "2", "--out", str(se_resumed)] + common) == 0
    a, b = Checkpoint.load(se), Checkpoint.load(se_resumed)
    assert a.tensors.keys() == b.tensors.keys()
    assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)
    assert a.meta["train"]["train_beta"] == 1.0

    reg = tmp_path / "reg.ckpt"
    assert main(["regulars", "--ckpt", str(se), "--n", "2", "--steps", "1", "--out", str(reg)] + _ref_flags(ref)) == 0
    assert Checkpoint.load(reg).tensors["regular.images"].shape == (2, 3, 32, 32)
    ft = tmp_path / "ft.ckpt"
    assert main(["finetune", "--ckpt", str(se), "--regulars", str(reg), "--steps", "2", "--out", str(ft), "--log-every", "1000"]) == 0
    ck = Checkpoint.load(ft)
    assert ck.stage == "finetune" and ck.meta["config"]["lr_token"] == 5e-3 and ck.meta["class_word"] == "star"
    out = tmp_path / "gen"
    assert main(["generate", "--ckpt", str(ft), "--prompt", "a star <S*> on navy", "--n", "1", "--steps", "1", "--out", str(out)]) == 0
    assert read_ppm(out / "img_000000.ppm").shape == (3, 32, 32)
    assert (out / "reference.ppm").is_file()


def test_ablate_grid(tmp_path, ckpt, ref, capsys):
    out = tmp_path / "ab.json"
    args = ["ablate", "--ckpt", str(ckpt), "--prompt", "a star on gray", "--n", "1", "--steps", "1", "--out", str(out)]
    assert main(args + _ref_flags(ref)) == 0
    rows = json.loads(out.read_text())["rows"]
    grid = {(r["beta"], r["omega_ref"]) for r in rows if r["variant"] == "grid"}
    assert grid == {(b, w) for b in (0.0, 0.1, 0.2, 0.5) for w in (0.0, 1.0, 2.5, 10.0)}
    assert [r["variant"] for r in rows][-1] == "mask-off"
    table = capsys.readouterr().out
    assert table.splitlines()[0].split("\t") == ["variant", "beta", "omega_ref", "identity", "prompt"]


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 6


# -- error categories --------------------------------------------------------------------


def test_unknown_flag(capsys):
    assert main(["generate", "--bogus"]) == EXIT_CODES["usage"]
    assert _err(capsys) == "usage"


def test_missing_file(tmp_path, capsys):
    code = main(["generate", "--ckpt", str(tmp_path / "nope.ckpt"), "--prompt", "a star", "--out", str(tmp_path)])
    assert code == EXIT_CODES["missing-file"] and _err(capsys) == "missing-file"


def test_corrupt_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage\n")
    code = main(["generate", "--ckpt", str(bad), "--prompt", "a star", "--out", str(tmp_path)])
    assert code == EXIT_CODES["corrupt-checkpoint"] and _err(capsys) == "corrupt-checkpoint"


def test_bad_config_value(tmp_path, ckpt, capsys):
    code = main(["generate", "--ckpt", str(ckpt), "--prompt", "a star", "--p-r", "1.5", "--out", str(tmp_path)])
    assert code == EXIT_CODES["config"] and _err(capsys) == "config"


def test_bad_prompt(tmp_path, ckpt, capsys):
    code = main(["generate", "--ckpt", str(ckpt), "--prompt", "two stars", "--out", str(tmp_path)])
    assert code == EXIT_CODES["contract"] and _err(capsys) == "contract"


def test_exit_codes_are_distinct():
    assert len(set(EXIT_CODES.values())) == len(EXIT_CODES) and 0 not in EXIT_CODES.values()
