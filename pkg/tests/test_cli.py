import json
from pathlib import Path

import numpy as np
import pytest

from traj_thermo import cli
from traj_thermo.config import ConfigError, default_config, default_config_text, parse_config
from traj_thermo.dilation import CondUnitary2Q, Unitary2Q, import_ir

IDENTITY_MODEL = """
[model]
omega = 0.0
kappa = 0.0

[trajectory]
N = 2

[[bias]]
name = "u"
variant = "field"
s = [0.0]
"""

SINGULAR_MODEL = """
[model]
omega = 0.0
kappa = 1.5707963267948966

[trajectory]
N = 3

[[bias]]
name = "u"
variant = "field"
s = [2000.0]
"""


def small_config(n=4, shots=2000, extra=""):
    return f"""
[trajectory]
N = {n}

[[bias]]
name = "stag"
variant = "field"
p = "staggered"
s = [-2.0, 0.0, 2.0]

[[bias]]
name = "nn"
variant = "nn"
s = [-1.0, 0.0, 1.0]
{extra}
[sampling]
shots = {shots}
seed = 5
"""


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def body(path):
    """File content without the leading header comment."""
    lines = Path(path).read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    return lines[1:]


def read_csv(path):
    rows = body(path)[1:]
    return {a: float(b) for a, b in (r.split(",") for r in rows)}


class TestConfig:
    def test_default_parses(self):
        cfg = default_config()
        assert cfg.n == 6
        assert [b.name for b in cfg.biases] == ["uniform", "staggered", "random", "nn"]
        assert cfg.sampling.shots == 20000

    def test_round_trip(self):
        cfg = default_config()
        again = parse_config(cfg.dumps())
        assert again.to_dict() == cfg.to_dict()
        assert again.hash() == cfg.hash()

    def test_round_trip_pairwise(self):
        text = """
[trajectory]
N = 3
[[bias]]
name = "pw"
variant = "pairwise"
p = [1.0, 0.5, -1.0]
q = [[2, 1, 0.25], [3, 1, -1.0]]
s = [1.0]
"""
        cfg = parse_config(text)
        assert parse_config(cfg.dumps()).to_dict() == cfg.to_dict()
        q = cfg.biases[0].coupling_matrix(3)
        assert q[1, 0] == 0.25 and q[2, 0] == -1.0

    def test_hash_changes_with_content(self):
        a = parse_config(small_config())
        b = parse_config(small_config(shots=2001))
        assert a.hash() != b.hash()

    def test_random_field_seeded(self):
        cfg = default_config()
        p = cfg.biases[2].field_vector(6)
        assert set(p) <= {-1.0, 1.0} and not np.all(p == 1)

    @pytest.mark.parametrize(
        "text, where",
        [
            ("[trajectory]\nN = 0\n[[bias]]\nvariant='nn'\ns=[1.0]\n", "trajectory.N"),
            ("[trajectory]\nN = 3\n", "bias"),
            ("[[bias]]\nvariant='bogus'\ns=[1.0]\n", "bias[0].variant"),
            ("[[bias]]\nvariant='field'\ns=[]\n", "bias[0].s"),
            ("[[bias]]\nvariant='field'\np=[1.0]\ns=[1.0]\n", "bias[0].p"),
            ("[[bias]]\nvariant='field'\nq=[[2,1,1.0]]\ns=[1.0]\n", "bias[0].q"),
            ("[[bias]]\nvariant='pairwise'\nq=[[1,2,1.0]]\ns=[1.0]\n", "bias[0].q[0]"),
            ("[[bias]]\nvariant='nn'\np='uniform'\ns=[1.0]\n", "bias[0]"),
            ("[model]\npsi0=[[1.0,0.0],[1.0,0.0]]\n[[bias]]\nvariant='nn'\ns=[1.0]\n", "model.psi0"),
            ("[sampling]\nshots=0\n[[bias]]\nvariant='nn'\ns=[1.0]\n", "sampling.shots"),
            ("[model]\nomega='x'\n[[bias]]\nvariant='nn'\ns=[1.0]\n", "model.omega"),
            ("[extra]\n[[bias]]\nvariant='nn'\ns=[1.0]\n", "config"),
            ("[outputs]\nformats=['png']\n[[bias]]\nvariant='nn'\ns=[1.0]\n", "outputs.formats"),
            ("[[bias]]\nvariant='nn'\ns=[1.0]\n[[bias]]\nvariant='nn'\ns=[2.0]\n", "bias"),
            ("not toml ===", "TOML"),
        ],
    )
    def test_errors_name_the_field(self, text, where):
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert where in str(info.value)

    def test_cli_config_error_exit(self, tmp_path, capsys):
        path = write(tmp_path, "[[bias]]\nvariant='bogus'\ns=[1.0]\n")
        assert cli.main(["exact", "--config", path, "--out", str(tmp_path)]) == cli.EXIT_CONFIG
        assert "bias[0].variant" in capsys.readouterr().err

    def test_missing_file_exit(self, tmp_path):
        assert cli.main(["exact", "--config", str(tmp_path / "nope.toml")]) == cli.EXIT_CONFIG


class TestNaming:
    @pytest.mark.parametrize("s, tag", [(-2.0, "m2"), (0.0, "0"), (-0.0, "0"), (2.0, "2"), (0.5, "0p5"), (-1.25, "m1p25")])
    def test_s_tag(self, s, tag):
        assert cli.s_tag(s) == tag

    @pytest.mark.parametrize("x, text", [(1.0, "1.0"), (0.0, "0.0"), (0.25, "0.25"), (1e-20, "1e-20"), (-3.0, "-3.0")])
    def test_fmt(self, x, text):
        assert cli.fmt(x) == text


class TestExact:
    def test_identity_model_single_row(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["exact", "--config", write(tmp_path, IDENTITY_MODEL), "--out", str(out)]) == 0
        assert body(out / "exact_u_s0.csv") == ["bitstring,probability", "00,1.0"]
        assert body(out / "exact_u_energy_s0.csv") == ["energy,probability", "0.0,1.0"]

    def test_uniform_panel_histograms_normalized(self, tmp_path):
        paths = cli.cmd_exact(default_config(), str(tmp_path))
        for s in ("m2", "0", "2"):
            hist = read_csv(tmp_path / f"exact_uniform_energy_s{s}.csv")
            assert sorted(hist) == [str(float(e)) for e in range(7)]
            assert abs(sum(hist.values()) - 1) <= 1e-9
        assert len(paths) == 4 * 3 * 3

    def test_s_times_p_invariance(self, tmp_path):
        negated = """
[trajectory]
N = 6
[[bias]]
name = "stag"
variant = "field"
p = "staggered"
s = [2.0]
[[bias]]
name = "neg"
variant = "field"
p = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0]
s = [-2.0]
"""
        cli.cmd_exact(parse_config(negated), str(tmp_path))
        for kind in ("", "_energy", "_marginal"):
            a = body(tmp_path / f"exact_stag{kind}_s2.csv")
            b = body(tmp_path / f"exact_neg{kind}_sm2.csv")
            if kind == "_energy":
                # energies flip sign with p; probabilities per bin must match
                assert len(a) == len(b)
                ea = {float(r.split(",")[0]): r.split(",")[1] for r in a[1:]}
                eb = {-float(r.split(",")[0]): r.split(",")[1] for r in b[1:]}
                assert ea == eb
            else:
                assert a == b

    def test_s0_identical_across_variants(self, tmp_path):
        cli.cmd_exact(default_config(), str(tmp_path))
        ref = read_csv(tmp_path / "exact_uniform_s0.csv")
        for name in ("staggered", "random", "nn"):
            other = read_csv(tmp_path / f"exact_{name}_s0.csv")
            assert other.keys() == ref.keys()
            assert max(abs(other[k] - ref[k]) for k in ref) <= 1e-12

    def test_marginals(self, tmp_path):
        cli.cmd_exact(parse_config(small_config()), str(tmp_path))
        rows = body(tmp_path / "exact_nn_marginal_s1.csv")
        assert rows[0] == "step,p_one" and len(rows) == 5

    def test_pairwise_supported(self, tmp_path):
        text = "[trajectory]\nN = 3\n[[bias]]\nname='pw'\nvariant='pairwise'\np=[1.0,0.0,1.0]\nq=[[3,1,1.0]]\ns=[1.0]\n"
        assert cli.main(["exact", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 0
        assert cli.main(["sample", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


class TestSample:
    def test_summary_fields(self, tmp_path):
        cfg = parse_config(small_config(n=6, shots=20000))
        cli.cmd_sample(cfg, str(tmp_path))
        summary = json.loads((tmp_path / "sample_nn_s1.json").read_text())
        assert {"tv_to_exact", "chi2", "dof", "seed", "shots", "config_hash", "energy_histogram"} <= set(summary)
        assert summary["seed"] == 5 and summary["shots"] == 20000
        assert summary["tv_to_exact"] <= 0.03
        hist = summary["energy_histogram"]
        assert [h["energy"] for h in hist] == [-5.0, -3.0, -1.0, 1.0, 3.0, 5.0]
        for h in hist:
            assert abs(h["sampled"] - h["exact"]) < 0.02
        counts = read_csv(tmp_path / "sample_nn_s1.csv")
        assert sum(counts.values()) == 20000

    def test_baseline_tv(self, tmp_path):
        cli.cmd_sample(default_config(), str(tmp_path))
        summary = json.loads((tmp_path / "sample_uniform_s0.json").read_text())
        assert summary["tv_to_exact"] <= 0.02

    def test_byte_identical_reruns(self, tmp_path):
        path = write(tmp_path, small_config())
        for d in ("a", "b"):
            assert cli.main(["sample", "--config", path, "--out", str(tmp_path / d)]) == 0
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_thread_count_does_not_change_output(self, tmp_path, monkeypatch):
        cfg = parse_config(small_config(shots=5000))
        monkeypatch.setenv("TRAJ_THERMO_THREADS", "1")
        cli.cmd_sample(cfg, str(tmp_path / "one"))
        monkeypatch.setenv("TRAJ_THERMO_THREADS", "4")
        cli.cmd_sample(cfg, str(tmp_path / "four"))
        for p in (tmp_path / "one").iterdir():
            assert p.read_bytes() == (tmp_path / "four" / p.name).read_bytes()

    def test_singular_g_exit(self, tmp_path, capsys):
        path = write(tmp_path, SINGULAR_MODEL)
        assert cli.main(["sample", "--config", path, "--out", str(tmp_path / "o")]) == cli.EXIT_NUMERIC
        err = capsys.readouterr().err
        assert "step" in err and "smaller |s|" in err


class TestCircuit:
    def test_single_step(self, tmp_path):
        text = IDENTITY_MODEL.replace("N = 2", "N = 1")
        cli.main(["circuit", "--config", write(tmp_path, text), "--out", str(tmp_path)])
        circuit = import_ir(tmp_path / "circuit_u_s0.trajir")
        assert [type(op).__name__ for op in circuit.ops] == ["StatePrep", "Unitary2Q", "Measure"]

    def test_nn_has_conditional_gates(self, tmp_path):
        cli.cmd_circuit(parse_config(small_config()), str(tmp_path))
        circuit = import_ir(tmp_path / "circuit_nn_s1.trajir")
        gates = [op for op in circuit.ops if isinstance(op, (Unitary2Q, CondUnitary2Q))]
        assert isinstance(gates[0], Unitary2Q)
        assert all(isinstance(g, CondUnitary2Q) for g in gates[1:]) and len(gates) == 4

    def test_execute_agrees_with_kraus_sampler(self, tmp_path):
        cli.cmd_circuit(default_config(), str(tmp_path), execute=True)
        summary = json.loads((tmp_path / "circuit_uniform_s2.json").read_text())
        assert summary["tv_to_kraus_sampler"] <= 0.03
        assert summary["shots"] == 20000

    def test_reuse_policy(self, tmp_path):
        path = write(tmp_path, small_config())
        assert cli.main(["circuit", "--config", path, "--out", str(tmp_path), "--ancilla-policy", "reuse"]) == 0
        circuit = import_ir(tmp_path / "circuit_nn_s1.trajir")
        assert circuit.ancilla_policy == "reuse" and circuit.num_qubits == 2

    def test_ir_header_comment(self, tmp_path):
        cli.cmd_circuit(parse_config(small_config()), str(tmp_path))
        lines = (tmp_path / "circuit_stag_sm2.trajir").read_text().splitlines()
        assert lines[0] == "TRAJIR v1" and lines[1].startswith("# config_hash=")


class TestVerify:
    def test_default_config_passes(self, tmp_path):
        assert cli.main(["verify", "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "verify_report.json").read_text())
        assert report["passed"]
        names = {c["check"] for c in report["checks"]}
        assert {"central_identity", "trace_preservation", "z_identity", "dilation_roundtrip", "gate_unitarity"} <= names

    def test_s0_only(self, tmp_path):
        text = small_config().replace("[-2.0, 0.0, 2.0]", "[0.0]").replace("[-1.0, 0.0, 1.0]", "[0.0]")
        ok, _ = cli.cmd_verify(parse_config(text), str(tmp_path))
        assert ok

    def test_corrupted_g_flags_trace_preservation(self, tmp_path):
        def corrupt(gseq):
            if gseq.variant == "field":
                gseq.g[2] = gseq.g[2] * 1.05
            else:
                gseq.g[2] = (gseq.g[2][0] * 1.05, gseq.g[2][1])

        ok, path = cli.cmd_verify(parse_config(small_config()), str(tmp_path), g_hook=corrupt)
        assert not ok
        report = json.loads(Path(path).read_text())
        failed = {c["check"] for c in report["checks"] if not c["passed"]}
        assert "trace_preservation" in failed

    def test_verify_exit_code(self, tmp_path, monkeypatch):
        real = cli.verify_checks

        def broken(config, g_hook=None):
            return real(config, lambda g: g.g.__setitem__(1, 2 * np.asarray(g.g[1])) if g.variant == "field" else None)

        monkeypatch.setattr(cli, "verify_checks", broken)
        path = write(tmp_path, small_config())
        assert cli.main(["verify", "--config", path, "--out", str(tmp_path)]) == cli.EXIT_VERIFY


def test_default_config_text_is_packaged():
    assert "[[bias]]" in default_config_text()
