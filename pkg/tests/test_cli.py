"""CLI round trips: CSV output, exit codes, reproducibility."""

import math

import pytest

from popdrift.cli import main

ZERO_DOC = "states = a, b\nrate a -> b : 0\n"
BAD_RANGE_DOC = "states = a, b\nrate a -> b : 1 - 3*m[b]\nrate b -> a : 0.1\n"


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def rows(text):
    return [line.split(",") for line in text.strip().split("\n")]


def write_model(tmp_path, doc):
    path = tmp_path / "model.pop"
    path.write_text(doc)
    return str(path)


# ---------------------------------------------------------------- exit codes


def test_usage_error_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["drift", "--N", "10"])
    assert exc.value.code == 1
    assert capsys.readouterr().err.startswith("error: usage:")


def test_unknown_subcommand_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_help_exits_0(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "validate" in capsys.readouterr().out


def test_model_error_exits_2(capsys, tmp_path):
    path = write_model(tmp_path, "states = a, b\nrate a -> b : 1 + )\n")
    code, out, err = run(capsys, "drift", "--model", path, "--N", "10", "--m", "1,0")
    assert code == 2
    assert err.startswith("error: model: line 2:")
    assert out == ""


def test_missing_model_file_exits_2(capsys, tmp_path):
    code, _, err = run(
        capsys, "drift", "--model", str(tmp_path / "nope.pop"),
        "--N", "10", "--m", "1,0",
    )
    assert code == 2
    assert err.startswith("error: model:")


def test_unknown_state_in_hist_exits_2(capsys):
    code, _, err = run(
        capsys, "simulate", "--N", "5", "--init", "1,0", "--t", "1",
        "--reps", "2", "--hist", "1,bogus",
    )
    assert code == 2
    assert err.startswith("error: model:")


def test_numerics_error_exits_3(capsys, tmp_path):
    # constant rate 1000 with step 0.05 overshoots the simplex
    path = write_model(tmp_path, "states = a, b\nrate a -> b : 1000\n")
    code, _, err = run(
        capsys, "ode", "--model", path, "--variant", "drift",
        "--N", "10", "--init", "0.5,0.5", "--t", "50", "--points", "3",
    )
    assert code == 3
    assert err.startswith("error: numerics:")


def test_validate_failure_exits_2(capsys, tmp_path):
    path = write_model(tmp_path, BAD_RANGE_DOC)
    code, out, err = run(capsys, "validate", "--model", path, "--N", "20")
    assert code == 2
    assert "error: model: validation failed:" in err
    # the report row is still emitted
    header, row = rows(out)
    assert header[2] == "ok"
    assert row[2] == "false"


# ------------------------------------------------------------------- values


def test_drift_csv_value(capsys):
    code, out, _ = run(capsys, "drift", "--N", "10", "--m", "1,0")
    assert code == 0
    header, row = rows(out)
    assert header == ["F_idle", "F_backoff"]
    expected = 0.008 * (1.0 - (1.0 - 0.008 / 2.0) ** 10)
    assert math.isclose(float(row[1]), expected, rel_tol=1e-12)
    assert math.isclose(float(row[0]), -expected, rel_tol=1e-12)


def test_meandrift_matches_library(capsys):
    import numpy as np

    from popdrift.meandrift import mean_drift
    from popdrift.model import builtin_example

    code, out, _ = run(capsys, "meandrift", "--N", "10", "--m", "0.5,0.5")
    assert code == 0
    _, row = rows(out)
    vec = mean_drift(builtin_example(), 10, np.array([0.5, 0.5]))
    assert math.isclose(float(row[0]), vec[0], rel_tol=1e-12)
    assert math.isclose(float(row[1]), vec[1], rel_tol=1e-12)


def test_ode_limit_final_value(capsys):
    code, out, _ = run(
        capsys, "ode", "--variant", "limit", "--init", "1,0",
        "--t", "1000", "--points", "11",
    )
    assert code == 0
    table = rows(out)
    assert table[0] == ["t", "phi_idle", "phi_backoff"]
    assert len(table) == 12
    assert float(table[-1][0]) == 1000.0
    assert abs(float(table[-1][2]) - (1.0 - math.exp(-0.008 * 1000.0))) < 1e-6


def test_exact_matches_detailed_balance(capsys):
    code, out, _ = run(capsys, "exact", "--N", "1", "--init", "1,0", "--t", "1000")
    assert code == 0
    header, row = rows(out)
    assert header == ["t", "E_phi_idle", "E_phi_backoff", "mode"]
    assert abs(float(row[2]) - 6.5598e-4) < 1e-8
    assert row[3] == "1|0"


def test_exact_full_distribution_sums_to_one(capsys):
    code, out, _ = run(
        capsys, "exact", "--N", "4", "--init", "1,0", "--t", "100", "--full"
    )
    assert code == 0
    summary, dump = out.split("\n\n")
    table = rows(dump)
    assert table[0] == ["state_counts", "probability"]
    assert len(table) == 1 + 5
    total = sum(float(r[1]) for r in table[1:])
    assert abs(total - 1.0) < 1e-12
    counts = [r[0] for r in table[1:]]
    assert counts[0] == "0|4" and counts[-1] == "4|0"
    # expected occupancy from the dump agrees with the summary row
    occ2 = sum(float(r[1]) * int(r[0].split("|")[1]) / 4.0 for r in table[1:])
    assert abs(occ2 - float(rows(summary)[1][2])) < 1e-12


def test_simulate_sections(capsys, tmp_path):
    ref = tmp_path / "ref.csv"
    code, _, _ = run(
        capsys, "ode", "--variant", "drift", "--N", "10", "--init", "1,0",
        "--t", "200", "--points", "9", "--out", str(ref),
    )
    assert code == 0
    code, out, _ = run(
        capsys, "simulate", "--N", "10", "--init", "1,0", "--t", "200",
        "--reps", "40", "--seed", "5", "--points", "9",
        "--hist", "200,backoff", "--ref", str(ref),
    )
    assert code == 0
    mean_sec, hist_sec, sup_sec = out.split("\n\n")
    table = rows(mean_sec)
    assert table[0] == [
        "t", "mean_phi_idle", "mean_phi_backoff",
        "stderr_phi_idle", "stderr_phi_backoff",
    ]
    assert len(table) == 10
    # means stay on the simplex
    for r in table[1:]:
        assert abs(float(r[1]) + float(r[2]) - 1.0) < 1e-12

    hist = rows(hist_sec)
    assert hist[0] == ["hist_time", "hist_state", "k", "count"]
    assert sum(int(r[3]) for r in hist[1:]) == 40
    assert all(r[1] == "backoff" for r in hist[1:])

    sup = rows(sup_sec)
    assert sup[0] == ["mse_sup", "reps", "failures"]
    assert float(sup[1][0]) >= 0.0
    assert sup[1][1] == "40" and sup[1][2] == "0"


def test_simulate_rejects_malformed_reference(capsys, tmp_path):
    ref = tmp_path / "ref.csv"
    ref.write_text("t,phi_a\n0,1\n1,0.5\n")
    code, _, err = run(
        capsys, "simulate", "--N", "5", "--init", "1,0", "--t", "1",
        "--reps", "2", "--ref", str(ref),
    )
    assert code == 2
    assert "columns" in err


def test_compare_small_populations(capsys):
    code, out, err = run(
        capsys, "compare", "--Ns", "1,2,5", "--t", "1000", "--init", "1,0",
        "--step", "0.5",
    )
    assert code == 0
    assert err == ""
    table = rows(out)
    assert table[0] == ["N", "phi2_drift", "phi2_meandrift", "phi2_exact"]
    assert [r[0] for r in table[1:]] == ["1", "2", "5"]
    row1 = table[1]
    assert abs(float(row1[3]) - 6.5598e-4) < 1e-8
    # the Poisson-averaged ODE tracks the exact mean at tiny N
    for r in table[1:]:
        assert abs(float(r[2]) - float(r[3])) < 0.02
        assert float(r[1]) > 0.0


def test_compare_sim_columns_and_zero_rate_model(capsys, tmp_path):
    path = write_model(tmp_path, ZERO_DOC)
    code, out, _ = run(
        capsys, "compare", "--model", path, "--Ns", "2,4", "--t", "10",
        "--init", "0.5,0.5", "--reps", "10", "--seed", "3",
    )
    assert code == 0
    table = rows(out)
    assert table[0][-2:] == ["phi2_sim_mean", "phi2_sim_stderr"]
    for r in table[1:]:
        # nothing moves, so every column reports the initial occupancy
        for col in (1, 2, 3, 4):
            assert float(r[col]) == 0.5
        assert float(r[5]) == 0.0


def test_chaos_output_shape(capsys):
    code, out, _ = run(
        capsys, "chaos", "--Ns", "5,10", "--t", "50", "--init", "1,0",
        "--reps", "100", "--seed", "7", "--step", "0.5",
    )
    assert code == 0
    table = rows(out)
    assert table[0] == ["N", "lambda", "tv_backoff"]
    assert [r[0] for r in table[1:]] == ["5", "10"]
    for r in table[1:]:
        assert 0.0 < float(r[1]) < 1.0
        assert 0.0 <= float(r[2]) <= 1.0


def test_validate_default_model(capsys):
    code, out, err = run(capsys, "validate", "--N", "100", "--samples", "200")
    assert code == 0
    assert err == ""
    header, row = rows(out)
    assert header[0] == "N" and row[2] == "true"
    assert float(row[4]) < 1.0  # rates here are small probabilities


# ---------------------------------------------------------- reproducibility


def test_repeated_runs_byte_identical(tmp_path, capsys):
    args = [
        "simulate", "--N", "20", "--init", "1,0", "--t", "100",
        "--reps", "30", "--seed", "42", "--points", "5",
        "--hist", "100,backoff",
    ]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    capsys.readouterr()
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != b""


def test_jobs_do_not_change_simulate_output(tmp_path, capsys):
    args = [
        "simulate", "--N", "15", "--init", "1,0", "--t", "150",
        "--reps", "130", "--seed", "9", "--points", "4",
    ]
    a, b = tmp_path / "j1.csv", tmp_path / "j4.csv"
    assert main(args + ["--jobs", "1", "--out", str(a)]) == 0
    assert main(args + ["--jobs", "4", "--out", str(b)]) == 0
    capsys.readouterr()
    assert a.read_bytes() == b.read_bytes()


def test_jobs_do_not_change_compare_output(tmp_path, capsys):
    args = [
        "compare", "--Ns", "1,2,5,8", "--t", "200", "--init", "1,0",
        "--step", "0.5", "--reps", "25", "--seed", "13",
    ]
    a, b = tmp_path / "j1.csv", tmp_path / "j3.csv"
    assert main(args + ["--jobs", "1", "--out", str(a)]) == 0
    assert main(args + ["--jobs", "3", "--out", str(b)]) == 0
    capsys.readouterr()
    assert a.read_bytes() == b.read_bytes()
