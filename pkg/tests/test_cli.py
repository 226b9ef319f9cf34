import numpy as np
import pytest

from cfan import io
from cfan.cli import main
from cfan.training import init_head


def write_cfg(path, **kv):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kv.items()), encoding="utf-8")


BASE = dict(
    n_subjects=12, dim=6, map_dim=10, instances_per_subject=10, seed=3,
    template_size=5, steps=30, subjects_per_batch=4, templates_per_subject=2,
    images_per_template=3, l2_normalize="true",
)


@pytest.fixture
def workdir(tmp_path):
    write_cfg(tmp_path / "run.cfg", **BASE)
    assert main(["gen-data", "--config", str(tmp_path / "run.cfg"),
                 "--out", str(tmp_path / "data.cfan")]) == 0
    return tmp_path


def test_gen_data_reports_count(workdir, capsys):
    capsys.readouterr()
    assert main(["gen-data", "--config", str(workdir / "run.cfg"),
                 "--out", str(workdir / "fresh.cfan")]) == 0
    assert "wrote 120 instances" in capsys.readouterr().out
    map_dim, dim, records = io.read_feature_file(workdir / "data.cfan")
    assert (map_dim, dim, len(records)) == (10, 6, 120)


def test_gen_data_deterministic_and_seed_sensitive(workdir):
    cfg = str(workdir / "run.cfg")
    main(["gen-data", "--config", cfg, "--out", str(workdir / "again.cfan")])
    assert (workdir / "again.cfan").read_bytes() == (workdir / "data.cfan").read_bytes()
    main(["gen-data", "--config", cfg, "--seed", "99", "--out", str(workdir / "other.cfan")])
    assert (workdir / "other.cfan").read_bytes() != (workdir / "data.cfan").read_bytes()


def test_gen_data_errors(tmp_path, capsys):
    write_cfg(tmp_path / "empty.cfg", n_subjects=0)
    assert main(["gen-data", "--config", str(tmp_path / "empty.cfg"),
                 "--out", str(tmp_path / "x")]) == 1
    assert "error: empty dataset" in capsys.readouterr().err

    write_cfg(tmp_path / "noout.cfg", n_subjects=2)
    assert main(["gen-data", "--config", str(tmp_path / "noout.cfg")]) == 1
    assert "error: no output path" in capsys.readouterr().err

    assert main(["gen-data", "--config", str(tmp_path / "missing.cfg"),
                 "--out", str(tmp_path / "x")]) == 1
    assert capsys.readouterr().err.startswith("error:")


def train_model(workdir, mode="cfan", seed=None, name="model.cfnm", log=None):
    argv = ["train", "--config", str(workdir / "run.cfg"),
            "--data", str(workdir / "data.cfan"),
            "--mode", mode, "--out", str(workdir / name)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    if log is not None:
        argv += ["--log", str(log)]
    return main(argv)


def test_train_writes_model_and_log(workdir, capsys):
    assert train_model(workdir, log=workdir / "train.log") == 0
    assert "trained 30 steps" in capsys.readouterr().out
    head = io.load_model(workdir / "model.cfnm")
    assert head.mode == "cfan" and head.map_dim == 10 and head.out_dim == 6
    lines = (workdir / "train.log").read_text().splitlines()
    assert len(lines) == 30
    assert lines[0].startswith("step 0 loss ")
    assert lines[-1].startswith("step 29 loss ")


def test_train_seed_override_changes_model(workdir):
    train_model(workdir, seed=1, name="m1.cfnm")
    train_model(workdir, seed=1, name="m1b.cfnm")
    train_model(workdir, seed=2, name="m2.cfnm")
    assert (workdir / "m1.cfnm").read_bytes() == (workdir / "m1b.cfnm").read_bytes()
    assert (workdir / "m1.cfnm").read_bytes() != (workdir / "m2.cfnm").read_bytes()


def test_train_rejects_average_mode(workdir, capsys):
    write_cfg(workdir / "avg.cfg", mode="average", **BASE)
    assert main(["train", "--config", str(workdir / "avg.cfg"),
                 "--data", str(workdir / "data.cfan"),
                 "--out", str(workdir / "m.cfnm")]) == 1
    assert "error: mode average has no trainable head" in capsys.readouterr().err


def test_train_augmentation_checks_dimensions(workdir, capsys):
    mismatched = dict(BASE, dim=5, noise_augment="gaussian 0.5")
    write_cfg(workdir / "aug.cfg", **mismatched)
    assert main(["train", "--config", str(workdir / "aug.cfg"),
                 "--data", str(workdir / "data.cfan"),
                 "--mode", "cfan", "--out", str(workdir / "m.cfnm")]) == 1
    assert "augmentation config dimensions" in capsys.readouterr().err


def test_aggregate_modes_and_errors(workdir, capsys):
    assert train_model(workdir) == 0
    data = str(workdir / "data.cfan")
    model = str(workdir / "model.cfnm")

    assert main(["aggregate", "--data", data, "--mode", "average",
                 "--out", str(workdir / "avg.cfnr")]) == 0
    assert "wrote 24 template representations" in capsys.readouterr().out
    dim, mode, reps = io.read_reps_file(workdir / "avg.cfnr")
    assert (dim, mode, len(reps)) == (6, "average", 24)
    assert all(r.n_instances == 5 for r in reps)

    assert main(["aggregate", "--data", data, "--model", model, "--mode", "cfan",
                 "--out", str(workdir / "cfan.cfnr")]) == 0

    assert main(["aggregate", "--data", data, "--mode", "cfan",
                 "--out", str(workdir / "x")]) == 1
    assert "error: mode cfan requires --model" in capsys.readouterr().err

    assert main(["aggregate", "--data", data, "--model", model, "--mode", "instance",
                 "--out", str(workdir / "x")]) == 1
    assert "model was trained for mode cfan, not instance" in capsys.readouterr().err

    write_cfg(workdir / "narrow.cfg", **dict(BASE, map_dim=8))
    main(["gen-data", "--config", str(workdir / "narrow.cfg"),
          "--out", str(workdir / "narrow.cfan")])
    capsys.readouterr()
    assert main(["aggregate", "--data", str(workdir / "narrow.cfan"),
                 "--model", model, "--mode", "cfan",
                 "--out", str(workdir / "x")]) == 1
    assert "model input dimension does not match" in capsys.readouterr().err


def test_aggregate_constant_head_equals_average(workdir):
    # zero FC weight makes every quality logit the bias: uniform weights
    head = init_head(10, 6, "cfan", np.random.default_rng(0))
    head.fc.weight[:] = 0.0
    head.fc.bias[:] = 0.3
    io.save_model(workdir / "const.cfnm", head)
    data = str(workdir / "data.cfan")
    main(["aggregate", "--data", data, "--mode", "average", "--out", str(workdir / "a.cfnr")])
    main(["aggregate", "--data", data, "--model", str(workdir / "const.cfnm"),
          "--mode", "cfan", "--out", str(workdir / "c.cfnr")])
    _, _, avg = io.read_reps_file(workdir / "a.cfnr")
    _, _, const = io.read_reps_file(workdir / "c.cfnr")
    for a, c in zip(avg, const):
        assert a.template_id == c.template_id
        assert np.allclose(a.vector, c.vector, rtol=0, atol=1e-12)


def test_evaluate_identification_report(workdir, capsys):
    assert train_model(workdir) == 0
    data = str(workdir / "data.cfan")
    main(["aggregate", "--data", data, "--model", str(workdir / "model.cfnm"),
          "--mode", "cfan", "--out", str(workdir / "reps.cfnr")])
    capsys.readouterr()
    report = workdir / "report.txt"
    assert main(["evaluate", "--gallery", str(workdir / "reps.cfnr"),
                 "--probes", str(workdir / "reps.cfnr"),
                 "--gallery-templates", "t0", "--probe-templates", "t1",
                 "--ranks", "1,5", "--cmc-curve", str(workdir / "cmc.csv"),
                 "--out", str(report)]) == 0
    lines = report.read_text().splitlines()
    metrics = [ln.split()[0] for ln in lines]
    assert metrics.count("metric=cmc") == 2
    assert metrics.count("metric=tar_at_far") == 2
    assert "metric=tpir_at_fpir" not in metrics  # every probe is mated here

    curve = (workdir / "cmc.csv").read_text().splitlines()
    assert len(curve) == 12  # one gallery entry per subject
    assert curve[0].startswith("1,")
    assert curve[-1] == f"12,{1.0:.17g}"


def test_evaluate_perfect_match_rates(tmp_path, capsys):
    noiseless = dict(BASE, sigma_min=0, sigma_max=0)
    write_cfg(tmp_path / "run.cfg", **noiseless)
    main(["gen-data", "--config", str(tmp_path / "run.cfg"), "--out", str(tmp_path / "d.cfan")])
    main(["aggregate", "--data", str(tmp_path / "d.cfan"), "--mode", "average",
          "--out", str(tmp_path / "r.cfnr")])
    capsys.readouterr()
    assert main(["evaluate", "--gallery", str(tmp_path / "r.cfnr"),
                 "--probes", str(tmp_path / "r.cfnr"),
                 "--gallery-templates", "t0", "--probe-templates", "t1",
                 "--ranks", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "metric=cmc target=1 value=1 threshold=nan"
    assert all(" value=1 " in ln for ln in lines if ln.startswith("metric=tar_at_far"))


def test_evaluate_open_set_subset_gallery(workdir, capsys):
    data = str(workdir / "data.cfan")
    main(["aggregate", "--data", data, "--mode", "average", "--out", str(workdir / "r.cfnr")])
    dim, mode, reps = io.read_reps_file(workdir / "r.cfnr")
    enrolled = [r for r in reps if r.subject_id <= "s00005" and r.template_id.endswith("/t0")]
    io.write_reps_file(workdir / "gal.cfnr", dim, mode, enrolled)
    capsys.readouterr()
    assert main(["evaluate", "--gallery", str(workdir / "gal.cfnr"),
                 "--probes", str(workdir / "r.cfnr"), "--probe-templates", "t1"]) == 0
    out = capsys.readouterr().out
    assert out.count("metric=tpir_at_fpir") == 2
    assert "flagged=" in out
    assert out.count("metric=cmc") == 3  # mated subset still gets a CMC block


def test_evaluate_pairs_protocol(tmp_path, capsys):
    eye = np.eye(8)
    recs = []
    for i in range(6):
        for t in range(2):
            recs.append(io.RepRecord(f"s{i}", f"s{i}/t{t}", 1, eye[i].copy()))
    io.write_reps_file(tmp_path / "r.cfnr", 8, "average", recs)
    pair_lines = [f"s{i}/t0 s{i}/t1 same" for i in range(6)]
    pair_lines += [f"s{i}/t0 s{(i + 1) % 6}/t0 different" for i in range(6)]
    (tmp_path / "pairs.txt").write_text("# header comment\n" + "\n".join(pair_lines) + "\n")
    assert main(["evaluate", "--reps", str(tmp_path / "r.cfnr"),
                 "--pairs", str(tmp_path / "pairs.txt")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "metric=pair_accuracy_mean target=nan value=1 threshold=nan" in out
    assert "metric=pair_accuracy_std target=nan value=0 threshold=nan" in out
    assert sum(ln.startswith("metric=pair_fold") for ln in out) == 10


def test_evaluate_pair_errors(tmp_path, capsys):
    io.write_reps_file(tmp_path / "r.cfnr", 2, "average",
                       [io.RepRecord("s0", "s0/t0", 1, np.ones(2))])
    (tmp_path / "bad.txt").write_text("s0/t0 s9/t0 same\n")
    assert main(["evaluate", "--reps", str(tmp_path / "r.cfnr"),
                 "--pairs", str(tmp_path / "bad.txt")]) == 1
    assert "unknown template 's9/t0'" in capsys.readouterr().err

    (tmp_path / "bad.txt").write_text("s0/t0 s0/t0 equal\n")
    assert main(["evaluate", "--reps", str(tmp_path / "r.cfnr"),
                 "--pairs", str(tmp_path / "bad.txt")]) == 1
    assert "expected 'template_a template_b same|different'" in capsys.readouterr().err

    assert main(["evaluate", "--pairs", str(tmp_path / "bad.txt")]) == 1
    assert "error: --pairs requires --reps" in capsys.readouterr().err


def test_evaluate_identification_errors(tmp_path, capsys):
    io.write_reps_file(tmp_path / "a.cfnr", 2, "average",
                       [io.RepRecord("s0", "s0/t0", 1, np.ones(2))])
    io.write_reps_file(tmp_path / "b.cfnr", 3, "average",
                       [io.RepRecord("s0", "s0/t0", 1, np.ones(3))])

    assert main(["evaluate", "--probes", str(tmp_path / "a.cfnr")]) == 1
    assert "identification needs --gallery and --probes" in capsys.readouterr().err

    assert main(["evaluate", "--gallery", str(tmp_path / "a.cfnr"),
                 "--probes", str(tmp_path / "b.cfnr")]) == 1
    assert "gallery and probe dimensions differ" in capsys.readouterr().err

    assert main(["evaluate", "--gallery", str(tmp_path / "a.cfnr"),
                 "--probes", str(tmp_path / "a.cfnr"),
                 "--probe-templates", "t9"]) == 1
    assert "no templates matched suffixes ['t9']" in capsys.readouterr().err


def test_analyze_corr_writes_square_matrix(workdir, capsys):
    out = workdir / "corr.csv"
    assert main(["analyze-corr", "--data", str(workdir / "data.cfan"),
                 "--out", str(out)]) == 0
    assert "wrote 6x6 correlation matrix" in capsys.readouterr().out
    rows = [ln.split(",") for ln in out.read_text().splitlines()]
    mat = np.array(rows, dtype=float)
    assert mat.shape == (6, 6)
    assert np.allclose(np.diag(mat), 1.0)
    assert np.allclose(mat, mat.T)


def test_cli_requires_valid_subcommand():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
