import numpy as np

from hardnet_cws import plotting
from hardnet_cws.encoder import builtin_schedule
from hardnet_cws.metrics import evaluate_set


def test_figures_written_and_byte_stable(tmp_path, rng):
    scheds = [builtin_schedule("dfus"), builtin_schedule("cws")]
    a = plotting.plot_schedules(scheds, tmp_path / "a.png")
    b = plotting.plot_schedules(scheds, tmp_path / "b.png")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_other_figures(tmp_path, rng):
    img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    assert plotting.plot_planes(img, {"eY": np.zeros((8, 8))}, tmp_path / "p.png").is_file()
    s = evaluate_set([(np.ones((2, 2), bool), np.ones((2, 2), bool))], ["a"])
    assert plotting.plot_metrics(s, tmp_path / "m.png").is_file()
    hist = [{"epoch": 1, "train_loss": 1.0, "iou": 0.5, "dsc": 0.6}]
    assert plotting.plot_history(hist, tmp_path / "h.png", "fold 0").is_file()
    rows = [{"Rater": "r1", "A": 10.0, "B": 20.0}]
    assert plotting.plot_rating_bars(rows, tmp_path / "r.png", ["A", "B"]).is_file()


def test_figure_path():
    assert plotting.figure_path("out/summary.csv", "metrics").as_posix() == "out/summary_metrics.png"
