"""End-to-end CLI tests: subcommands, exit codes, file contracts, round trips."""

import numpy as np

from drpkit import cli
from drpkit.fileio import read_coverage_csv, write_joint_file, write_posterior_file
from drpkit.numerics import SeededRng


def run(*argv):
    return cli.main(list(argv))


def toy_args(out, case="correct", dim=2, n_sims=25, n_post=30, seed=7, extra=()):
    return ["toy", "--case", case, "--dim", str(dim), "--n-sims", str(n_sims),
            "--n-post", str(n_post), "--seed", str(seed), "--out", str(out), *extra]


class TestToyCommand:
    def test_writes_both_methods(self, tmp_path):
        assert run(*toy_args(tmp_path / "o")) == 0
        for name in ("drp.csv", "hpd.csv", "resolved_config.txt"):
            assert (tmp_path / "o" / name).exists()

    def test_config_echo_has_defaults(self, tmp_path):
        run(*toy_args(tmp_path / "o"))
        text = (tmp_path / "o" / "resolved_config.txt").read_text()
        assert "ref_policy=hypercube" in text
        assert "seed=7" in text

    def test_usage_error_on_zero_sims(self, tmp_path):
        code = run(*toy_args(tmp_path / "o", n_sims=0))
        assert code == 2

    def test_usage_error_on_bad_method(self, tmp_path):
        assert run(*toy_args(tmp_path / "o", extra=("--methods", "drp,nope"))) == 2

    def test_usage_error_on_missing_out(self):
        assert run("toy", "--case", "correct") == 2

    def test_deterministic_output_bytes(self, tmp_path):
        run(*toy_args(tmp_path / "a"))
        run(*toy_args(tmp_path / "b"))
        assert (tmp_path / "a" / "drp.csv").read_bytes() == (tmp_path / "b" / "drp.csv").read_bytes()
        assert (tmp_path / "a" / "hpd.csv").read_bytes() == (tmp_path / "b" / "hpd.csv").read_bytes()

    def test_csv_grid_and_alpha_contract(self, tmp_path):
        run(*toy_args(tmp_path / "o"))
        levels, alpha, ecp, lo, hi, meta = read_coverage_csv(tmp_path / "o" / "drp.csv")
        assert np.array_equal(levels, np.arange(101) / 100.0)
        assert np.all(levels + alpha == 1.0)
        assert np.all(np.diff(ecp) >= 0)
        assert meta["policy"] == "hypercube"

    def test_svg_written(self, tmp_path):
        run(*toy_args(tmp_path / "o", extra=("--svg",)))
        svg = (tmp_path / "o" / "coverage.svg").read_text()
        assert svg.count("<polyline") == 2  # one curve per method
        assert "stroke-dasharray" in svg    # the diagonal reference

    def test_prior_policy_runs(self, tmp_path):
        assert run(*toy_args(tmp_path / "o", extra=("--ref-policy", "prior"))) == 0

    def test_threads_env_does_not_change_output(self, tmp_path, monkeypatch):
        monkeypatch.delenv("DRPKIT_THREADS", raising=False)
        run(*toy_args(tmp_path / "serial"))
        monkeypatch.setenv("DRPKIT_THREADS", "3")
        run(*toy_args(tmp_path / "threads"))
        assert ((tmp_path / "serial" / "drp.csv").read_bytes()
                == (tmp_path / "threads" / "drp.csv").read_bytes())


class TestRoundTrip:
    def test_coverage_reproduces_toy_drp_bit_exact(self, tmp_path):
        out = tmp_path / "toy"
        assert run(*toy_args(out, dim=3, n_sims=20, n_post=15, seed=11,
                             extra=("--dump-samples",))) == 0
        cov_out = tmp_path / "cov"
        code = run("coverage", "--joint", str(out / "toy_joint.csv"),
                   "--posterior", str(out / "toy_posterior.csv"),
                   "--bounds=-5:5", "--ref-policy", "hypercube",
                   "--seed", "11", "--out", str(cov_out))
        assert code == 0
        assert (out / "drp.csv").read_bytes() == (cov_out / "drp.csv").read_bytes()


class TestUninformativeCommand:
    def test_writes_three_curves(self, tmp_path):
        out = tmp_path / "u"
        assert run("uninformative", "--n-sims", "30", "--n-post", "25",
                   "--seed", "3", "--out", str(out)) == 0
        for name in ("hpd.csv", "drp-prior.csv", "drp-datashift.csv"):
            assert (out / name).exists()

    def test_single_posterior_sample_quantized(self, tmp_path):
        out = tmp_path / "u1"
        assert run("uninformative", "--n-sims", "30", "--n-post", "1",
                   "--seed", "3", "--out", str(out)) == 0
        levels, _, ecp, *_ = read_coverage_csv(out / "drp-prior.csv")
        # with one draw each rank is 0 or 1: the curve has a single jump
        interior = ecp[(levels > 0) & (levels <= 1)]
        assert np.all(interior == interior[0])

    def test_missing_out_is_usage_error(self):
        assert run("uninformative", "--n-sims", "10") == 2


class TestLensingCommand:
    def test_runs_and_writes_grids(self, tmp_path):
        out = tmp_path / "l"
        code = run("lensing", "--estimator", "exact", "--source-size", "8",
                   "--n-sims", "4", "--n-post", "10", "--steps", "40",
                   "--seed", "1", "--out", str(out))
        assert code == 0
        assert (out / "exact.csv").exists()
        grids = (out / "sim000_grids.csv").read_text().splitlines()
        assert grids[0] == "row,col,truth,post_mean,post_std,residual"
        assert len(grids) == 1 + 64

    def test_zero_steps_usage_error(self, tmp_path):
        assert run("lensing", "--estimator", "exact", "--steps", "0",
                   "--out", str(tmp_path / "l")) == 2

    def test_divergence_exits_one_with_context(self, tmp_path, monkeypatch, capsys):
        from drpkit import lensing as lensing_mod

        def blow_up(model, schedule, kind, x, n, rng):
            raise lensing_mod.DivergenceError("reverse SDE diverged at step 5", step=5)

        monkeypatch.setattr(lensing_mod, "rsde_sample_batch", blow_up)
        code = run("lensing", "--estimator", "biased", "--n-sims", "3",
                   "--n-post", "5", "--steps", "20", "--seed", "1",
                   "--out", str(tmp_path / "l"))
        assert code == 1
        err = capsys.readouterr().err
        assert "step 5" in err and "simulation" in err


class TestCoverageCommand:
    def make_files(self, tmp_path, n_sims=12, n_post=10, dim=2, seed=5):
        g = SeededRng(seed).generator()
        truths = g.uniform(-1, 1, (n_sims, dim))
        joint = tmp_path / "joint.csv"
        write_joint_file(joint, np.arange(n_sims), truths)
        draws = {i: truths[i] + 0.5 * g.standard_normal((n_post, dim)) for i in range(n_sims)}
        post = tmp_path / "post.csv"
        write_posterior_file(post, draws)
        return joint, post

    def test_self_consistent_files_in_band(self, tmp_path):
        # truths and samples i.i.d. from the same per-sim distribution
        n_sims, n_post = 120, 80
        g = SeededRng(9).generator()
        centers = g.uniform(-2, 2, (n_sims, 2))
        pool = centers[:, None, :] + g.standard_normal((n_sims, n_post + 1, 2))
        truths = pool[:, 0, :]
        draws = {i: pool[i, 1:, :] for i in range(n_sims)}
        joint = tmp_path / "joint.csv"
        post = tmp_path / "post.csv"
        write_joint_file(joint, np.arange(n_sims), truths)
        write_posterior_file(post, draws)
        out = tmp_path / "out"
        assert run("coverage", "--joint", str(joint), "--posterior", str(post),
                   "--seed", "3", "--out", str(out)) == 0
        levels, _, ecp, *_ = read_coverage_csv(out / "drp.csv")
        hw = 3 * np.sqrt(levels * (1 - levels) / n_sims)
        assert np.mean(np.abs(ecp - levels) <= hw) >= 0.97

    def test_missing_posterior_sim_exits_one(self, tmp_path, capsys):
        joint, post = self.make_files(tmp_path)
        lines = post.read_text().splitlines()
        kept = [ln for ln in lines if not ln.startswith("3,")]
        post.write_text("\n".join(kept) + "\n")
        code = run("coverage", "--joint", str(joint), "--posterior", str(post),
                   "--out", str(tmp_path / "o"))
        assert code == 1
        assert "sim_id 3" in capsys.readouterr().err

    def test_weighted_metric_zero_weight_usage_error(self, tmp_path):
        joint, post = self.make_files(tmp_path)
        wfile = tmp_path / "w.txt"
        wfile.write_text("1.0\n0.0\n")
        code = run("coverage", "--joint", str(joint), "--posterior", str(post),
                   "--metric", f"weighted:{wfile}", "--out", str(tmp_path / "o"))
        assert code == 2

    def test_weighted_metric_runs(self, tmp_path):
        joint, post = self.make_files(tmp_path)
        wfile = tmp_path / "w.txt"
        wfile.write_text("1.0\n2.5\n")
        assert run("coverage", "--joint", str(joint), "--posterior", str(post),
                   "--metric", f"weighted:{wfile}", "--out", str(tmp_path / "o")) == 0

    def test_datashift_requires_obs(self, tmp_path):
        joint, post = self.make_files(tmp_path)
        assert run("coverage", "--joint", str(joint), "--posterior", str(post),
                   "--ref-policy", "datashift:0,1.0", "--out", str(tmp_path / "o")) == 2

    def test_datashift_with_obs(self, tmp_path):
        g = SeededRng(4).generator()
        truths = g.uniform(-1, 1, (8, 1))
        joint = tmp_path / "joint.csv"
        write_joint_file(joint, np.arange(8), truths)
        write_posterior_file(tmp_path / "post.csv",
                             {i: truths[i] + g.standard_normal((6, 1)) for i in range(8)})
        from drpkit.fileio import write_observation_file
        write_observation_file(tmp_path / "obs.csv", np.arange(8),
                               g.standard_normal((8, 3)))
        assert run("coverage", "--joint", str(joint),
                   "--posterior", str(tmp_path / "post.csv"),
                   "--obs", str(tmp_path / "obs.csv"),
                   "--ref-policy", "datashift:0,1.0",
                   "--out", str(tmp_path / "o")) == 0

    def test_prior_file_policy(self, tmp_path):
        joint, post = self.make_files(tmp_path)
        pfile = tmp_path / "prior.csv"
        pfile.write_text("0.0,0.0\n1.0,-1.0\n0.5,0.5\n")
        assert run("coverage", "--joint", str(joint), "--posterior", str(post),
                   "--ref-policy", f"prior-file:{pfile}", "--out", str(tmp_path / "o")) == 0

    def test_bounds_file(self, tmp_path):
        joint, post = self.make_files(tmp_path)
        bfile = tmp_path / "bounds.csv"
        bfile.write_text("-3,3\n-3,3\n")
        assert run("coverage", "--joint", str(joint), "--posterior", str(post),
                   "--bounds", f"file:{bfile}", "--out", str(tmp_path / "o")) == 0

    def test_varying_sample_counts_allowed(self, tmp_path):
        g = SeededRng(6).generator()
        truths = g.uniform(-1, 1, (4, 1))
        joint = tmp_path / "joint.csv"
        write_joint_file(joint, np.arange(4), truths)
        draws = {i: g.standard_normal((3 + i, 1)) for i in range(4)}
        write_posterior_file(tmp_path / "post.csv", draws)
        out = tmp_path / "o"
        assert run("coverage", "--joint", str(joint),
                   "--posterior", str(tmp_path / "post.csv"), "--out", str(out)) == 0
        *_, meta = read_coverage_csv(out / "drp.csv")
        assert meta["n_post"] == "0"  # mixed counts


class TestPlotCommand:
    def test_single_curve(self, tmp_path):
        out = tmp_path / "t"
        run(*toy_args(out, extra=("--methods", "drp")))
        svg_path = tmp_path / "one.svg"
        assert run("plot", "--in", str(out / "drp.csv"), "--out", str(svg_path)) == 0
        svg = svg_path.read_text()
        assert svg.count("<polyline") == 1
        assert svg.count("stroke-dasharray") == 1

    def test_three_curves_three_legend_entries(self, tmp_path):
        out = tmp_path / "u"
        run("uninformative", "--n-sims", "15", "--n-post", "10", "--seed", "1",
            "--out", str(out))
        svg_path = tmp_path / "three.svg"
        files = ",".join(str(out / n) for n in ("hpd.csv", "drp-prior.csv", "drp-datashift.csv"))
        assert run("plot", "--in", files, "--out", str(svg_path)) == 0
        svg = svg_path.read_text()
        assert svg.count("<polyline") == 3
        assert svg.count("<polygon") == 3

    def test_header_only_csv_errors(self, tmp_path):
        bad = tmp_path / "empty.csv"
        bad.write_text("credibility,alpha,ecp,band_lo,band_hi\n")
        assert run("plot", "--in", str(bad), "--out", str(tmp_path / "x.svg")) == 1


class TestExitCodes:
    def test_unknown_subcommand(self):
        assert run("frobnicate") == 2

    def test_version_flag(self, capsys):
        code = run("--version")
        assert code == 0
