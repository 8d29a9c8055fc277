"""End-to-end acceptance suite.

Each test covers one pinned guarantee of the package and prints a single
summary line when it passes (run with ``pytest -s`` to see them; a failed
test reports through pytest itself).  The reconstruction benchmarks run
on frozen phantoms with frozen solver settings; the measured margins
behind each tolerance are noted inline.
"""

import json
import time
import warnings

import numpy as np
import pytest
import scipy.ndimage as ndi

from psrecon.baselines import difference_thermogram, ppt
from psrecon.datasets import open_dataset, read_dataset, write_dataset
from psrecon.errors import CorruptDatasetError, FormatVersionError
from psrecon.fourier import SpectralOperator, reconstruct_fft, spectral_forward
from psrecon.metrics import separability
from psrecon.phantom import (
    DefectMap,
    ScanPlan,
    forward_simulate,
    homogeneity_check,
    plan_triangular_grid,
)
from psrecon.solver import ReconConfig, norm_l21, prox_l21_l2
from psrecon.stacking import build_conv_matrix, reconstruct_sms
from psrecon.thermal import (
    Grid2D,
    PlateSpec,
    diffusion_length,
    fwhm_diameter,
    synth_psf,
)

PX = 2.5e-4  # m, pixel pitch shared by the benchmark phantoms


def _pass(label: str, detail: str):
    print(f"acceptance [{label}]: PASS ({detail})")


def _simulate(plate, excitation, plan, truth, t_eval, seed, snr_db=40.0):
    """Noisy stack at the given SNR, defined against the clean-run rms."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        clean = forward_simulate(plate, excitation, plan, truth, t_eval, 0.0, seed=seed)
        rms = float(np.sqrt(np.mean(np.asarray(clean.frames, float) ** 2)))
        sigma = rms / 10.0 ** (snr_db / 20.0)
        return forward_simulate(plate, excitation, plan, truth, t_eval,
                                noise_sigma=sigma, seed=seed)


# ------------------------------------------------- frozen benchmark runs


@pytest.fixture(scope="module")
def pair_bench(plate, excitation):
    """64x16 strip with two defect pairs at 1 px and 4 px edge gaps,
    24 spots, 40 dB noise.  Shared solver settings for both methods."""
    g = Grid2D(n_x=64, n_y=16, dx=PX, dy=PX)
    rects = [
        (12 * PX, 6 * PX, 3 * PX, 3 * PX),
        (16 * PX, 6 * PX, 3 * PX, 3 * PX),   # 1 px gap to the first
        (40 * PX, 6 * PX, 3 * PX, 3 * PX),
        (47 * PX, 6 * PX, 3 * PX, 3 * PX),   # 4 px gap to the third
    ]
    truth = DefectMap.from_rects(g, rects, 0.5)
    plan = plan_triangular_grid((2.25e-3, 0.5e-3, 11.25e-3, 2.7e-3), 1.5e-3, 0.375e-3)
    data = _simulate(plate, excitation, plan, truth, 0.09, seed=7)
    psf = synth_psf(plate, excitation, g, g.center(), 0.09)
    cfg = ReconConfig(lambda_21=0.004, lambda_2=3.0e-4, rho=0.0175,
                      n_iter=400, eval_time=0.09)
    fft = reconstruct_fft(data, psf, cfg, taper=False)
    sms = reconstruct_sms(data, psf, cfg)
    return dict(grid=g, truth=truth, plan=plan, data=data, psf=psf,
                cfg=cfg, fft=fft, sms=sms)


@pytest.fixture(scope="module")
def agreement_bench(plate, excitation):
    """32x32 interior phantom solved by both methods with one identical
    configuration."""
    g = Grid2D(n_x=32, n_y=32, dx=PX, dy=PX)
    rects = [
        (12 * PX, 13 * PX, 3 * PX, 3 * PX),
        (17 * PX, 15 * PX, 2 * PX, 2 * PX),
    ]
    truth = DefectMap.from_rects(g, rects, 0.4)
    plan = plan_triangular_grid((2.5e-3, 2.5e-3, 3.0e-3, 3.0e-3), 1.2e-3, 0.375e-3)
    data = _simulate(plate, excitation, plan, truth, 0.1, seed=5)
    psf = synth_psf(plate, excitation, g, g.center(), 0.1)
    cfg = ReconConfig(lambda_21=0.004, lambda_2=1e-3, rho=0.03,
                      n_iter=400, eval_time=0.1)
    fft = reconstruct_fft(data, psf, cfg, taper=False)
    sms = reconstruct_sms(data, psf, cfg)
    return dict(grid=g, truth=truth, data=data, psf=psf, cfg=cfg,
                fft=fft, sms=sms)


def _square_fixture(plate, excitation, nside):
    """Square benchmark at a given side length: one interior defect,
    a fixed 4x4 spot raster, 40 dB noise."""
    g = Grid2D(n_x=nside, n_y=nside, dx=PX, dy=PX)
    ex, ey = g.extent()
    truth = DefectMap.from_rects(
        g, [(0.4 * ex, 0.4 * ey, 0.1 * ex + g.dx, 0.1 * ey + g.dy)], 0.4
    )
    xs = np.linspace(0.25 * ex, 0.75 * ex, 4)
    ys = np.linspace(0.25 * ey, 0.75 * ey, 4)
    pos = np.array([[x, y] for y in ys for x in xs])
    plan = ScanPlan(pos, spot_pitch=float(xs[1] - xs[0]), spot_diameter=0.375e-3)
    data = _simulate(plate, excitation, plan, truth, 0.1, seed=6)
    psf = synth_psf(plate, excitation, g, g.center(), 0.1)
    return data, psf


@pytest.fixture(scope="module")
def timing_bench(plate, excitation):
    """Matched-iteration runtimes of both methods over grid sizes."""
    cfg = ReconConfig(lambda_21=0.004, lambda_2=1e-3, rho=0.03,
                      n_iter=400, eval_time=0.1)
    fft_runs = {}
    for n in (16, 32, 64):
        data, psf = _square_fixture(plate, excitation, n)
        best = None
        reps = 3 if n <= 32 else 2
        for _ in range(reps):
            res = reconstruct_fft(data, psf, cfg, taper=False)
            wall = res.diagnostics.wall_time
            if best is None or wall < best[0]:
                best = (wall, res)
        fft_runs[n] = best
    data32, psf32 = _square_fixture(plate, excitation, 32)
    sms_best = None
    for _ in range(2):
        res = reconstruct_sms(data32, psf32, cfg)
        wall = res.diagnostics.wall_time
        if sms_best is None or wall < sms_best[0]:
            sms_best = (wall, res)
    return dict(cfg=cfg, fft=fft_runs, sms32=sms_best)


# ------------------------------------------------------------ the gates


class TestForwardOperatorOracles:
    """Both forward operators against brute-force references: at least
    100 random instances each, up to 32x32, 1e-9 relative, under 30 s."""

    def test_operators_match_brute_force(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(100)

        worst_conv = 0.0
        for _ in range(100):
            n = int(np.exp(rng.uniform(np.log(4), np.log(1024))))
            gen = rng.normal(size=n)
            a = rng.normal(size=n)
            brute = np.zeros(2 * n - 1)
            for j in range(n):
                brute[j : j + n] += a[j] * gen
            got = build_conv_matrix(gen).matvec(a)
            rel = np.linalg.norm(got - brute) / np.linalg.norm(brute)
            worst_conv = max(worst_conv, rel)
        assert worst_conv < 1e-9

        worst_spec = 0.0
        for _ in range(100):
            ny = int(rng.integers(2, 33))
            nx = int(rng.integers(2, 33))
            raw = rng.random((ny, nx))
            ry = (2 * (ny // 2) - np.arange(ny)) % ny
            rx = (2 * (nx // 2) - np.arange(nx)) % nx
            kernel = 0.5 * (raw + raw[ry][:, rx])   # even about the center
            a = rng.normal(size=(ny, nx))
            g0 = np.fft.ifftshift(kernel)
            brute = np.zeros((ny, nx))
            for sy in range(ny):
                for sx in range(nx):
                    brute += g0[sy, sx] * np.roll(a, (sy, sx), axis=(0, 1))
            got = spectral_forward(SpectralOperator.from_psf(kernel), a)
            rel = np.linalg.norm(got - brute) / np.linalg.norm(brute)
            worst_spec = max(worst_spec, rel)
        assert worst_spec < 1e-9

        elapsed = time.perf_counter() - t0
        assert elapsed < 30.0
        _pass("forward operator oracles",
              f"conv rel {worst_conv:.1e}, spectral rel {worst_spec:.1e}, "
              f"{elapsed:.1f} s")


class TestProxOracle:
    """Closed-form agreement at 1e-12 and firm non-expansiveness over
    ten thousand random pairs."""

    def test_closed_form(self):
        rng = np.random.default_rng(101)
        worst = 0.0
        for l21, l2 in [(0.0, 0.0), (0.3, 0.0), (0.0, 0.5), (0.9, 0.4), (2.5, 1.5)]:
            l = rng.normal(scale=1.5, size=(500, 4))
            l[7] = 0.0
            want = np.zeros_like(l)
            for i in range(l.shape[0]):
                nrm = float(np.linalg.norm(l[i]))
                if nrm > 0.0:
                    want[i] = (max(0.0, nrm - l21) / (1.0 + l2)) * l[i] / nrm
            got = prox_l21_l2(l, l21, l2)
            worst = max(worst, float(np.abs(got - want).max()))
        assert worst < 1e-12
        _pass("prox closed form", f"max abs err {worst:.1e}")

    def test_non_expansive_10k_pairs(self):
        rng = np.random.default_rng(102)
        a = rng.normal(scale=4.0, size=(10_000, 5))
        b = rng.normal(scale=4.0, size=(10_000, 5))
        pa = prox_l21_l2(a, 0.8, 0.3)
        pb = prox_l21_l2(b, 0.8, 0.3)
        d_in = np.linalg.norm(a - b, axis=1)
        d_out = np.linalg.norm(pa - pb, axis=1)
        margin = float((d_in - d_out).min())
        assert np.all(d_out <= d_in + 1e-12)
        assert norm_l21(pa) <= norm_l21(a)  # shrinkage never grows the norm
        _pass("prox non-expansiveness", f"10000 pairs, min slack {margin:.2e}")


class TestPsfGuarantees:
    """Kernel symmetry, series truncation behavior, and the frozen
    analytic widths of the reference plate."""

    def test_sweep_symmetry_and_series(self, excitation):
        cases = [
            # (diffusivity, thickness, reflection, t)
            (3.76e-6, 4.5e-3, 1.0, 0.09),
            (3.76e-6, 4.5e-3, 1.0, 0.5),
            (3.76e-6, 4.5e-3, 0.95, 0.2),
            (1.17e-4, 2.0e-3, 0.9, 0.05),
            (5.2e-7, 8.0e-3, 1.0, 1.0),
        ]
        for alpha, thick, refl, t in cases:
            p = PlateSpec(thick, alpha, 7950.0, 502.0, reflection_coeff=refl)
            g = Grid2D(n_x=33, n_y=33, dx=PX, dy=PX)
            psf20 = synth_psf(p, excitation, g, g.center(), t, series_terms=20)
            psf45 = synth_psf(p, excitation, g, g.center(), t, series_terms=45)
            v = psf20.values
            assert np.all(v >= 0.0) and np.all(np.isfinite(v))
            assert np.allclose(v, v[::-1, :], rtol=1e-10, atol=v.max() * 1e-12)
            assert np.allclose(v, v[:, ::-1], rtol=1e-10, atol=v.max() * 1e-12)
            assert psf20.peak_index() == (16, 16)
            # truncation converged: widening the series changes nothing
            assert np.allclose(v, psf45.values, rtol=1e-9)
        _pass("psf symmetry and truncation", f"{len(cases)} parameter sets")

    def test_frozen_widths(self, plate):
        d = fwhm_diameter(plate, 0.5)
        l = diffusion_length(plate, 0.5)
        assert d == pytest.approx(4.566e-3, abs=0.5e-6)   # 4 significant digits
        assert l == pytest.approx(1.371e-3, abs=0.5e-6)
        _pass("frozen spread widths",
              f"d_FWHM(0.5 s) = {d * 1e3:.4f} mm, L_diff(0.5 s) = {l * 1e3:.4f} mm")


class TestPairSeparation:
    """Both solvers resolve defect pairs at 1 px and 4 px gaps under
    40 dB noise; the uniform-illumination analogue does not."""

    def test_both_methods_separate_both_pairs(self, pair_bench):
        b = pair_bench
        # the evaluation time puts the blur near 8 px, wider than both gaps
        blur_px = fwhm_diameter(b["data"].plate, 0.09) / PX
        assert 7.0 < blur_px < 9.0
        verdicts = {}
        for name in ("fft", "sms"):
            rep = separability(b[name].a_rec, b["truth"], valley_threshold=0.5,
                               pairs=[(0, 1), (2, 3)])
            assert rep.pairs[0].separated, f"{name} failed the 1 px pair"
            assert rep.pairs[1].separated, f"{name} failed the 4 px pair"
            verdicts[name] = [p.valley_ratio for p in rep.pairs]
            assert b[name].diagnostics.wall_time < 300.0
        _pass("pair separation at 40 dB",
              f"valley ratios fft {verdicts['fft'][0]:.2f}/{verdicts['fft'][1]:.2f}, "
              f"sms {verdicts['sms'][0]:.2f}/{verdicts['sms'][1]:.2f}")

    def test_uniform_illumination_analogue_fails(self, pair_bench):
        b = pair_bench
        frame_sum = np.asarray(b["data"].frames, dtype=float).sum(axis=0)
        rep = separability(frame_sum, b["truth"], valley_threshold=0.5,
                           pairs=[(0, 1)])
        assert not rep.pairs[0].separated
        _pass("thermogram baseline fails 1 px pair",
              f"valley ratio {rep.pairs[0].valley_ratio:.2f}")


class TestMethodAgreement:
    """Identically configured runs of the two solvers produce the same
    map on an interior phantom (Pearson r above 0.95; measured 1.0000)."""

    def test_pearson_correlation(self, agreement_bench):
        b = agreement_bench
        r = float(np.corrcoef(b["fft"].a_rec.ravel(), b["sms"].a_rec.ravel())[0, 1])
        assert r > 0.95
        _pass("method agreement", f"pearson r = {r:.4f}")


class TestSpectralSpeed:
    """At matched iteration counts the spectral path runs at least 5x
    faster on 32x32x16, and its runtime follows M log M over sizes."""

    def test_speedup_at_32(self, timing_bench):
        t_sms = timing_bench["sms32"][0]
        t_fft = timing_bench["fft"][32][0]
        ratio = t_sms / t_fft
        assert ratio >= 5.0
        _pass("spectral speedup", f"{t_sms:.3f} s vs {t_fft:.3f} s, {ratio:.1f}x")

    def test_runtime_scales_as_m_log_m(self, timing_bench):
        sizes = np.array([16, 32, 64], dtype=float)
        m = sizes**2
        x = m * np.log(m)
        t = np.array([timing_bench["fft"][int(n)][0] for n in (16, 32, 64)])
        slope, intercept = np.polyfit(x, t, 1)
        fit = slope * x + intercept
        ss_res = float(((t - fit) ** 2).sum())
        ss_tot = float(((t - t.mean()) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot
        assert r2 > 0.9
        _pass("spectral runtime scaling", f"R^2 = {r2:.3f} over sizes 16/32/64")


class TestSolverConvergence:
    """Every benchmark run ends at or below its starting objective with
    a relative primal residual under 1e-6 within 400 iterations."""

    def test_all_runs(self, pair_bench, agreement_bench, timing_bench):
        runs = {
            "pairs fft": pair_bench["fft"].diagnostics,
            "pairs sms": pair_bench["sms"].diagnostics,
            "agreement fft": agreement_bench["fft"].diagnostics,
            "agreement sms": agreement_bench["sms"].diagnostics,
            "timing sms 32": timing_bench["sms32"][1].diagnostics,
        }
        for n in (16, 32, 64):
            runs[f"timing fft {n}"] = timing_bench["fft"][n][1].diagnostics
        worst = 0.0
        for name, d in runs.items():
            assert d.n_iter_run <= 400
            assert d.objective[-1] <= d.objective_init, name
            rel = d.relative_primal()
            assert rel < 1e-6, f"{name}: relative primal {rel:.2e}"
            worst = max(worst, rel)
        _pass("solver convergence", f"{len(runs)} runs, worst relative primal {worst:.1e}")


class TestCoverageRule:
    """Spot pitches at or below half the blur width deliver uniform
    summed excitation; a single spot fails loudly."""

    def test_dense_plans_pass_single_spot_fails(self, plate):
        d = fwhm_diameter(plate, 0.5)
        roi = (0.0, 0.0, 40e-3, 12e-3)
        g = Grid2D(n_x=161, n_y=49, dx=PX, dy=PX)
        covs = []
        for pitch in (d / 2.0, d / 2.5):
            plan = plan_triangular_grid(roi, pitch, 0.375e-3)
            rep = homogeneity_check(plan, d, g, roi=roi)
            assert rep.passed, f"pitch {pitch:g} m"
            covs.append(rep.coefficient_of_variation)
        single = ScanPlan(np.array([[20e-3, 6e-3]]), d / 2.0, 0.375e-3)
        rep_one = homogeneity_check(single, d, g, roi=roi)
        assert not rep_one.passed
        assert rep_one.coefficient_of_variation > 0.05
        _pass("coverage rule",
              f"lattice CoV {max(covs):.1e} < 0.05 < single spot "
              f"{rep_one.coefficient_of_variation:.2f}")


class TestBaselineIdentities:
    """The comparison baselines obey their exact identities."""

    def test_ppt_single_tone(self):
        n_t, rate, k = 64, 100.0, 5
        rng = np.random.default_rng(103)
        amp = rng.uniform(0.5, 2.0, size=(6, 7))
        phase = rng.uniform(-np.pi, np.pi, size=(6, 7))
        n = np.arange(n_t)
        series = amp * np.cos(2 * np.pi * k * n[:, None, None] / n_t + phase)
        out = ppt(series, rate, k * rate / n_t)
        ref = np.fft.fft(series, axis=0)[k]
        amp_err = float(np.abs(out.amplitude - np.abs(ref)).max())
        ph_err = float(np.abs(out.phase - np.angle(ref)).max())
        assert out.bin_index == k
        assert np.allclose(out.amplitude, amp * n_t / 2.0, rtol=1e-9)
        assert amp_err < 1e-9 and ph_err < 1e-9
        _pass("ppt single-tone identity",
              f"amplitude err {amp_err:.1e}, phase err {ph_err:.1e}")

    def test_difference_of_identical_frames_is_zero(self):
        rng = np.random.default_rng(104)
        frame = rng.random((20, 30)).astype(np.float32)
        out = difference_thermogram(frame, frame.copy())
        assert np.all(out == 0.0)
        _pass("difference thermogram null", "bitwise zero on identical frames")


class TestReproducibility:
    """Datasets round-trip bitwise; seeded pipelines replay bitwise;
    corrupted manifests raise the documented errors."""

    def test_dataset_round_trip_bitwise(self, agreement_bench, tmp_path):
        data = agreement_bench["data"]
        write_dataset(data, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds")
        assert back.frames.tobytes() == data.frames.tobytes()
        _pass("dataset round trip", f"{data.n_m} frames bitwise equal")

    def test_seeded_pipeline_replays_bitwise(self, plate, excitation, agreement_bench):
        b = agreement_bench
        data2 = _simulate(plate, excitation,
                          plan_triangular_grid((2.5e-3, 2.5e-3, 3.0e-3, 3.0e-3),
                                               1.2e-3, 0.375e-3),
                          b["truth"], 0.1, seed=5)
        assert data2.frames.tobytes() == b["data"].frames.tobytes()
        again = reconstruct_fft(data2, b["psf"], b["cfg"], taper=False)
        assert again.a_rec.tobytes() == b["fft"].a_rec.tobytes()
        _pass("seeded replay", "simulation and reconstruction bitwise equal")

    def test_corrupt_manifests_raise_typed_errors(self, agreement_bench, tmp_path):
        data = agreement_bench["data"]

        def fresh(name):
            d = tmp_path / name
            write_dataset(data, d)
            return d

        d1 = fresh("v")
        doc = json.loads((d1 / "manifest.json").read_text())
        doc["format_version"] = 99
        (d1 / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(FormatVersionError):
            open_dataset(d1)

        d2 = fresh("n")
        doc = json.loads((d2 / "manifest.json").read_text())
        doc["n_m"] = doc["n_m"] + 1
        (d2 / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(CorruptDatasetError):
            open_dataset(d2)

        d3 = fresh("t")
        victim = d3 / "frame_0000.bin"
        victim.write_bytes(victim.read_bytes()[:-8])
        with pytest.raises(CorruptDatasetError, match="frame_0000.bin"):
            open_dataset(d3)
        _pass("corruption detection", "version, count, and truncation all typed")
