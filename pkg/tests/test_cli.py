import csv
import io
import json
import os

import numpy as np
import pytest

from sccdma.cli import EXIT_IO, EXIT_NOCONV, EXIT_OK, EXIT_USAGE, UNIQUE, main
from sccdma.scalar_channel import mse_qpsk


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr().out
    return code, out


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_xi_single(capsys):
    code, out = run(["xi", "--z", "0.5"], capsys)
    assert code == EXIT_OK
    (r,) = rows(out)
    assert float(r["xi"]) == mse_qpsk(0.5)


def test_xi_grid_monotone(capsys):
    code, out = run(["xi", "--z-min", "1e-3", "--z-max", "1e3", "--n", "50"], capsys)
    xi = [float(r["xi"]) for r in rows(out)]
    assert code == EXIT_OK and len(xi) == 50
    assert all(b > a for a, b in zip(xi, xi[1:]))


@pytest.mark.parametrize("argv", [["xi", "--z"], ["xi", "--z", "-1"],
                                  ["xi", "--z-min", "2", "--z-max", "1"], ["bogus"],
                                  ["de"], ["sumrate"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE


def test_io_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["xi", "--z", "0.5", "--out", str(blocker / "sub" / "out.csv")]) == EXIT_IO


def test_missing_config_is_io_error(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "none.json"), "xi"]) == EXIT_IO


def test_nonconvergence_exit(capsys):
    code = main(["de", "--kind", "uncoupled", "--L", "1", "--beta", "1.9", "--max-iter", "2"])
    assert code == EXIT_NOCONV


def test_de_uncoupled_flat(capsys):
    code, out = run(["de", "--kind", "uncoupled", "--L", "8", "--beta", "1.0"], capsys)
    xi = [float(r["xi_l"]) for r in rows(out)]
    assert code == EXIT_OK and len(xi) == 8
    assert max(xi) == min(xi)


def test_de_json(capsys):
    code, out = run(["de", "--L", "4", "--beta", "1.2", "--init", "both", "--format", "json"],
                    capsys)
    docs = json.loads(out)
    assert code == EXIT_OK
    assert [d["init"] for d in docs] == ["worst", "genie"]


def _profile(path):
    return np.array([float(r["xi_l"]) for r in rows(path.read_text())])


def test_de_profile_files(tmp_path, capsys):
    common = ["de", "--snr-db", "9", "--L", "32", "--W", "1", "--beta-init", "1.22",
              "--init", "both", "--out", str(tmp_path)]
    assert main(common + ["--beta", "1.655", "1.70"]) == EXIT_OK
    w = _profile(tmp_path / "profile_beta1.655000_worst.csv")
    g = _profile(tmp_path / "profile_beta1.655000_genie.csv")
    assert w.size == 32 and np.max(w) < 0.02
    assert np.max(np.abs(w - g)) < 1e-6
    w2 = _profile(tmp_path / "profile_beta1.700000_worst.csv")
    g2 = _profile(tmp_path / "profile_beta1.700000_genie.csv")
    assert np.ptp(w2) > 0.1
    assert np.max(np.abs(w2 - g2)) > 0.1
    meta = json.loads((tmp_path / "profile_beta1.700000_worst.json").read_text())
    assert meta["converged"] and meta["L"] == 32


def test_deterministic_output(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["de", "--L", "16", "--beta", "1.8", "--init", "both",
                     "--out", str(p)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"command": "sumrate", "beta": [1.8], "beta_init": 1.22,
                               "W": 1, "L": 32}))
    code, out = run(["--config", str(cfg)], capsys)
    assert code == EXIT_OK
    assert float(rows(out)[0]["rate"]) == pytest.approx(3.5472993437657747, rel=1e-15)
    code, out = run(["--config", str(cfg), "sumrate", "--W", "0"], capsys)
    assert float(rows(out)[0]["rate"]) == 3.6


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert main(["--config", str(cfg), "xi"]) == EXIT_USAGE


def test_sumrate_uncoupled(capsys):
    code, out = run(["sumrate", "--beta", "0.5", "1.7", "--W", "0"], capsys)
    assert [float(r["rate"]) for r in rows(out)] == [1.0, 3.4]


def test_potential_equal_depth_flagged(capsys):
    code, out = run(["potential", "--snr-db", "10", "--beta", "1.8121", "--n", "20"], capsys)
    kinds = [r["kind"] for r in rows(out) if r["kind"]]
    assert code == EXIT_OK
    assert kinds == ["min*", "max", "min*"]


def test_potential_json(capsys):
    code, out = run(["potential", "--beta", "1.9", "--n", "5", "--format", "json"], capsys)
    doc = json.loads(out)
    assert len(doc["y"]) == 5 and not doc["equal_depth"]
    assert [s["kind"] for s in doc["stationary"]] == ["min", "max", "min"]


def test_continuum_quartic_snapshots(capsys):
    code, out = run(["continuum", "--potential", "quartic", "--beta", "0.2", "--D", "1e-3",
                     "--M", "33", "--record-every", "500"], capsys)
    r = rows(out)
    assert code == EXIT_OK
    its = sorted({int(x["iteration"]) for x in r})
    assert its[0] == 0 and len(its) >= 2
    assert len(r) == 33 * len(its)


def test_continuum_threshold(capsys):
    code, out = run(["continuum", "--potential", "quartic", "--D", "1e-3", "--M", "33",
                     "--threshold", "--bracket", "-0.3", "0.38"], capsys)
    assert code == EXIT_OK
    assert abs(float(rows(out)[0]["threshold"])) < 5e-3


def test_threshold_command(capsys):
    code, out = run(["threshold", "--threshold", "bp", "--kind", "uncoupled",
                     "--snr-db", "10", "12"], capsys)
    r = rows(out)
    assert code == EXIT_OK
    assert float(r[0]["threshold"]) == pytest.approx(1.7307, abs=1e-3)
    assert float(r[1]["threshold"]) == pytest.approx(1.8734, abs=1e-3)
    assert r[0]["family"] == "uncoupled"


def test_tables_unique_regime(capsys):
    code, out = run(["tables", "--table", "2", "--snr-db", "8", "--workers", "1"], capsys)
    r = rows(out)
    assert code == EXIT_OK and len(r) == 5
    assert all(x["threshold"] == UNIQUE for x in r)


def test_tables_small_grid(capsys):
    code, out = run(["tables", "--table", "1", "--L", "8", "--W", "0", "--workers", "1"],
                    capsys)
    (r,) = rows(out)
    assert float(r["threshold"]) == pytest.approx(1.7307, abs=1e-3)
    assert r["kind"] == "table1:bp"
