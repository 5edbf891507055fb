import pytest

from feattrack.cli import main
from feattrack.config import dump_config, harness_config

TINY = dump_config(
    harness_config(
        init_pos=30, init_neg=120, init_iters=4, frame_pos=8, frame_neg=30,
        neg_pool=64, batch_pos=8, batch_neg=16, n_candidates=24, update_period=6,
        update_iters=1, backbone_width=8, fc1_width=24, fc2_width=32, g_hidden=8,
    )
)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    rc = main(
        ["synth", "--seed", "4", "--frames", "10", "--size", "160x120",
         "--target-size", "36", "--out", str(root / "seq")]
    )
    assert rc == 0
    return root


def test_synth_wrote_frames(workspace):
    assert (workspace / "seq" / "0010.ppm").exists()
    assert not (workspace / "seq" / "0011.ppm").exists()


def test_synth_with_challenges(workspace):
    rc = main(
        ["synth", "--seed", "4", "--frames", "3", "--challenges", "illumination,blur",
         "--size", "96x80", "--target-size", "20", "--out", str(workspace / "seq2")]
    )
    assert rc == 0
    assert (workspace / "seq2" / "0003.ppm").exists()


def test_track_then_eval(workspace):
    out = workspace / "results.csv"
    rc = main(
        ["track", "--seq", str(workspace / "seq"), "--config", str(workspace / "tiny.cfg"),
         "--seed", "5", "--out", str(out)]
    )
    assert rc == 0
    text = out.read_text()
    assert text.splitlines()[0] == "frame,x,y,w,h,confidence,ms"
    assert len(text.splitlines()) == 11

    report = workspace / "report.txt"
    rc = main(["eval", "--results", str(out), "--seq", str(workspace / "seq"), "--out", str(report)])
    assert rc == 0
    assert "precision_at_20" in report.read_text()


def test_track_byte_identical_across_runs(workspace):
    a = workspace / "a.csv"
    b = workspace / "b.csv"
    for out in (a, b):
        rc = main(
            ["track", "--seq", str(workspace / "seq"), "--config", str(workspace / "tiny.cfg"),
             "--seed", "5", "--out", str(out)]
        )
        assert rc == 0
    assert a.read_bytes() == b.read_bytes()


def test_bench_speed_writes_report(workspace):
    out = workspace / "bench.txt"
    rc = main(
        ["bench-speed", "--seq", str(workspace / "seq"), "--candidates", "4",
         "--config", str(workspace / "tiny.cfg"), "--seed", "1", "--out", str(out)]
    )
    assert rc == 0
    text = out.read_text()
    assert "speedup = " in text
    assert "analytic_flop_ratio = " in text


def test_missing_sequence_errors(workspace, capsys):
    rc = main(["track", "--seq", str(workspace / "nope"), "--out", str(workspace / "x.csv")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_errors(workspace, capsys):
    bad = workspace / "bad.cfg"
    bad.write_text("quantum_flux = 1\n")
    rc = main(
        ["track", "--seq", str(workspace / "seq"), "--config", str(bad),
         "--out", str(workspace / "y.csv")]
    )
    assert rc == 1
    assert "quantum_flux" in capsys.readouterr().err
