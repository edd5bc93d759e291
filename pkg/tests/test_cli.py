"""Command-line behavior: outputs, exit codes, and end-to-end flows."""

import numpy as np
import pytest

from svtr.cli import main
from svtr.data import read_pnm


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_params_reports_totals(capsys):
    code, out, err = run(capsys, "params", "--config", "svtr-t")
    assert code == 0 and not err
    assert "4.15 M" in out
    assert "embed" in out and "stage1" in out and "head" in out


def test_params_breakdown_sums(capsys):
    code, out, _ = run(capsys, "params", "--config", "svtr-micro")
    rows = {}
    total_incl = None
    for line in out.splitlines():
        parts = line.split()
        if len(parts) >= 2 and parts[1].replace(",", "").isdigit():
            if parts[0] == "total":
                if "incl." in line:
                    total_incl = int(parts[1].replace(",", ""))
            else:
                rows[parts[0]] = int(parts[1].replace(",", ""))
    assert total_incl == sum(rows.values())


def test_flops_prints_both_conventions(capsys):
    code, out, err = run(capsys, "flops", "--config", "svtr-t")
    assert code == 0 and not err
    assert "1-MAC convention" in out
    assert "2-FLOP convention" in out
    assert "quadratic" in out


def test_unknown_config_fails_cleanly(capsys):
    code, out, err = run(capsys, "params", "--config", "svtr-xxl")
    assert code == 1
    assert err.startswith("error:")
    assert "total" not in out


def test_missing_checkpoint_fails_cleanly(capsys, tmp_path):
    code, _, err = run(capsys, "infer", "--config", "svtr-micro",
                       "--checkpoint", str(tmp_path / "nope.ckpt"),
                       "--image", str(tmp_path / "nope.ppm"))
    assert code == 1
    assert err.startswith("error:")


def test_gen_data_layout(capsys, tmp_path):
    out_dir = tmp_path / "corpus"
    code, out, _ = run(capsys, "gen-data", "--out", str(out_dir), "--n", "5",
                       "--height", "16", "--width", "64")
    assert code == 0
    assert "wrote 5 samples" in out
    assert (out_dir / "labels.tsv").exists()
    assert len(list((out_dir / "images").glob("*.ppm"))) == 5


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One short CLI training run shared by the downstream command tests."""
    root = tmp_path_factory.mktemp("cli-flow")
    data_dir = root / "data"
    ckpt_dir = root / "ckpt"
    assert main(["gen-data", "--out", str(data_dir), "--n", "8",
                 "--height", "16", "--width", "64"]) == 0
    assert main(["train", "--config", "svtr-micro", "--data", str(data_dir),
                 "--epochs", "2", "--batch-size", "8", "--lr", "1e-3",
                 "--out", str(ckpt_dir), "--log", str(root / "metrics.tsv")]) == 0
    return root


def test_train_writes_checkpoints_and_log(trained):
    assert (trained / "ckpt" / "last.ckpt").exists()
    assert (trained / "ckpt" / "best.ckpt").exists()
    lines = (trained / "metrics.tsv").read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 3


def test_eval_prints_metrics(capsys, trained):
    code, out, _ = run(capsys, "eval", "--config", "svtr-micro",
                       "--checkpoint", str(trained / "ckpt" / "last.ckpt"),
                       "--data", str(trained / "data"))
    assert code == 0
    assert "word_accuracy" in out and "norm_edit_sim" in out


def test_infer_outputs_one_line_per_image(capsys, trained):
    images = sorted((trained / "data" / "images").glob("*.ppm"))[:2]
    code, out, _ = run(capsys, "infer", "--config", "svtr-micro",
                       "--checkpoint", str(trained / "ckpt" / "last.ckpt"),
                       "--image", *[str(p) for p in images])
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 2
    for line, path in zip(lines, images):
        assert line.startswith(str(path) + "\t")


def test_infer_deterministic(capsys, trained):
    image = sorted((trained / "data" / "images").glob("*.ppm"))[0]
    outputs = []
    for _ in range(2):
        code, out, _ = run(capsys, "infer", "--config", "svtr-micro",
                           "--checkpoint", str(trained / "ckpt" / "last.ckpt"),
                           "--image", str(image))
        assert code == 0
        outputs.append(out)
    assert outputs[0] == outputs[1]


def test_attn_dump_writes_one_file_per_head(capsys, trained, tmp_path):
    image = sorted((trained / "data" / "images").glob("*.ppm"))[0]
    code, out, _ = run(capsys, "attn-dump", "--config", "svtr-micro",
                       "--checkpoint", str(trained / "ckpt" / "last.ckpt"),
                       "--image", str(image), "--stage", "2", "--block", "0",
                       "--query", "3", "--out", str(tmp_path))
    assert code == 0
    files = sorted(tmp_path.glob("attn_s2_b0_h*_q3.pgm"))
    assert len(files) == 2  # both heads of stage 2
    for path in files:
        heatmap = read_pnm(path)
        assert heatmap.shape == (2, 16)
        assert heatmap.max() <= 1.0


def test_attn_dump_local_stage_zero_outside_window(capsys, trained, tmp_path):
    image = sorted((trained / "data" / "images").glob("*.ppm"))[0]
    code, _, _ = run(capsys, "attn-dump", "--config", "svtr-micro",
                     "--checkpoint", str(trained / "ckpt" / "last.ckpt"),
                     "--image", str(image), "--stage", "1", "--block", "0",
                     "--head", "0", "--query", "0", "--out", str(tmp_path))
    assert code == 0
    heatmap = read_pnm(tmp_path / "attn_s1_b0_h0_q0.pgm")
    # query (0,0) with a 7x11 window reaches rows 0..3 and cols 0..5
    assert heatmap.shape == (4, 16)
    assert np.all(heatmap[:, 6:] == 0)


def test_gradcheck_command_passes(capsys):
    code, out, _ = run(capsys, "gradcheck", "--dtype", "f64")
    assert code == 0
    assert "FAIL" not in out
