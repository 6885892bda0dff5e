"""Exit criteria of the build, one pytest item per checked case.

The terminal summary prints a PASS/FAIL line per criterion (see conftest).
Tolerances are fixed here and must not be loosened to make a case pass.
"""

import math
import time

import numpy as np
import pytest

from jumpsde.cli import main
from jumpsde.errors import SingularParameterError
from jumpsde.experiments import ConvergenceConfig, run_amplification_validation, run_convergence, run_stability_sweep
from jumpsde.increments import RandomSource, compensate, generate_brownian, generate_poisson, path_grid
from jumpsde.models import DriftSplit, JumpSdeProblem, LinearJumpSde, as_problem, get_problem
from jumpsde.schemes import SchemeKind, SchemeSpec, integrate_path
from jumpsde.stability import (
    MeanSquareClass,
    backward_euler_rate_beta1,
    compensated_backward_euler_rate_beta2,
    cstm_amplification,
    linear_l,
    nonlinear_alpha,
    semi_tamed_amplification,
    semi_tamed_linear_max_dt,
    stm_amplification,
    tamed_linear_max_dt,
)

ORDER_BAND = (0.40, 0.60)
POS_DRIFT = (2.0, 2.0, -0.9, 9.0)
NEG_DRIFT = (-7.0, 1.0, 1.0, 4.0)
TAMING_EX = (-1.0, 2.0, -0.9, 9.0)

acc = pytest.mark.acceptance


def _in_band(order: float) -> bool:
    return ORDER_BAND[0] <= order <= ORDER_BAND[1]


def _sig4(x: float) -> float:
    return float(f"{x:.4g}")


# -- 1: linear CSTM strong order -------------------------------------------------------

_C1_TIMES: dict[float, float] = {}


@acc(1)
@pytest.mark.slow
@pytest.mark.parametrize("theta", [0.0, 0.5, 1.0])
def test_c1_linear_cstm_order(theta, detail):
    cfg = ConvergenceConfig(as_problem(LinearJumpSde(1, 1, 0.5, 1)), SchemeSpec(SchemeKind.CSTM, theta),
                            fine_exponent=12, ratios=(1, 2, 4, 8, 16), paths=2000)
    t0 = time.perf_counter()
    report = run_convergence(cfg, threads="auto")
    _C1_TIMES[theta] = time.perf_counter() - t0
    detail(f"order={report.fitted_order:.4f}")
    assert _in_band(report.fitted_order)


@acc(1)
@pytest.mark.slow
def test_c1_runtime(detail):
    assert len(_C1_TIMES) == 3, "run together with the order cases"
    total = sum(_C1_TIMES.values())
    detail(f"{total:.1f}s")
    assert total < 30.0


# -- 2 and 3: nonlinear strong order ---------------------------------------------------

def _fine_order(problem_name: str, kind: SchemeKind):
    cfg = ConvergenceConfig(get_problem(problem_name), SchemeSpec(kind), fine_exponent=12, paths=2000,
                            reference="fine")
    return run_convergence(cfg, threads="auto")


@acc(2)
@pytest.mark.slow
def test_c2_compensated_tamed_quartic_order(detail):
    report = _fine_order("quartic", SchemeKind.COMPENSATED_TAMED)
    detail(f"order={report.fitted_order:.4f}")
    assert _in_band(report.fitted_order)


@acc(2)
@pytest.mark.slow
def test_c2_explicit_euler_quartic_diverges(detail):
    cfg = ConvergenceConfig(get_problem("quartic"), SchemeSpec(SchemeKind.EXPLICIT_EULER), fine_exponent=12,
                            paths=2000, reference="fine",
                            reference_scheme=SchemeSpec(SchemeKind.COMPENSATED_TAMED))
    largest = run_convergence(cfg, threads="auto").rows[-1]
    detail(f"dt={largest.dt:g} diverged={largest.diverged_fraction:.2%}")
    assert largest.diverged_fraction > 0.5


@acc(3)
@pytest.mark.slow
@pytest.mark.parametrize("kind", [SchemeKind.SEMI_TAMED, SchemeKind.TAMED], ids=lambda k: k.value)
def test_c3_cubic_split_order(kind, detail):
    report = _fine_order("cubic_split", kind)
    detail(f"order={report.fitted_order:.4f}")
    assert _in_band(report.fitted_order)


# -- 4: CSTM A-stability -----------------------------------------------------------------

@acc(4)
def test_c4_algebraic_equivalence(detail):
    rng = np.random.default_rng(20240604)
    checked = violations = 0
    while checked < 10_000:
        b, c, lam = rng.uniform(-5, 5), rng.uniform(-0.99, 5), rng.uniform(0, 10)
        a = -(rng.uniform(1e-3, 10) + b * b + lam * c * (2 + c)) / 2
        theta, dt = rng.uniform(0, 1), 10 ** rng.uniform(-4, 2)
        l = linear_l(a, b, c, lam)
        assert l < 0
        try:
            g = cstm_amplification(a, b, c, lam, theta, dt)
        except SingularParameterError:
            continue
        checked += 1
        violations += (g < 1) != ((1 - 2 * theta) * (a + lam * c) ** 2 * dt < -l)
    detail(f"{checked} points, {violations} violations")
    assert violations == 0


@acc(4)
@pytest.mark.slow
@pytest.mark.parametrize("dt", [25.0, 60.0])
@pytest.mark.parametrize("theta", [0.5, 1.0])
@pytest.mark.parametrize("coeffs", [POS_DRIFT, NEG_DRIFT], ids=["pos_drift", "neg_drift"])
def test_c4_empirical_stable(coeffs, theta, dt, detail):
    problem = as_problem(LinearJumpSde(*coeffs))
    row = run_stability_sweep(problem, SchemeSpec(SchemeKind.CSTM, theta), [dt], 2500.0, 2000,
                              threads="auto").rows[0]
    g = cstm_amplification(*coeffs, theta, dt)
    detail(f"{row.classification.value} rate={row.rate:.3g} (analytic {math.log(g) / dt:.3g})")
    assert row.classification is MeanSquareClass.STABLE


@acc(4)
@pytest.mark.parametrize("coeffs", [POS_DRIFT, NEG_DRIFT], ids=["pos_drift", "neg_drift"])
def test_c4_theta_below_half_unstable(coeffs, detail):
    g = cstm_amplification(*coeffs, 0.495, 60.0)
    detail(f"G={g:.6f}")
    assert g > 1


# -- 5: semi-tamed vs tamed ----------------------------------------------------------------

_C5_EXPECTED = {
    ("semi-tamed", 0.02): MeanSquareClass.STABLE,
    ("semi-tamed", 0.05): MeanSquareClass.STABLE,
    ("semi-tamed", 0.08): MeanSquareClass.STABLE,
    ("tamed", 0.02): MeanSquareClass.STABLE,
    ("tamed", 0.05): MeanSquareClass.STABLE,
    ("tamed", 0.08): MeanSquareClass.UNSTABLE,
}


@acc(5)
@pytest.mark.slow
@pytest.mark.parametrize("scheme,dt", list(_C5_EXPECTED), ids=[f"{s}-{d}" for s, d in _C5_EXPECTED])
def test_c5_classification(scheme, dt, detail):
    problem = as_problem(LinearJumpSde(*TAMING_EX))
    row = run_stability_sweep(problem, SchemeSpec(SchemeKind(scheme)), [dt], 2500.0, 2000,
                              threads="auto").rows[0]
    detail(f"{row.classification.value} rate={row.rate:.3g}")
    assert row.classification is _C5_EXPECTED[(scheme, dt)]


@acc(5)
def test_c5_thresholds(detail):
    semi = semi_tamed_linear_max_dt(*TAMING_EX)
    tamed = tamed_linear_max_dt(*TAMING_EX).max_dt
    detail(f"semi={semi:.6g} tamed={tamed:.6g}")
    assert _sig4(semi) == 0.08344 and _sig4(tamed) == 0.07371
    assert round(semi, 4) == 0.0834 and round(tamed, 4) == 0.0737
    assert semi < 0.084 and tamed < 0.074


# -- 6: amplification factors against Monte Carlo ---------------------------------------------

_C6_CASES = [
    ("stm", POS_DRIFT, 0.0, 0.005), ("stm", POS_DRIFT, 0.5, 0.02), ("stm", NEG_DRIFT, 1.0, 0.1),
    ("cstm", POS_DRIFT, 0.0, 0.005), ("cstm", POS_DRIFT, 0.5, 0.05), ("cstm", NEG_DRIFT, 1.0, 0.5),
    ("semi-tamed", TAMING_EX, None, 0.02), ("semi-tamed", TAMING_EX, None, 0.05),
    ("semi-tamed", (1.0, 1.0, 0.5, 1.0), None, 0.01),
]


@acc(6)
@pytest.mark.slow
@pytest.mark.parametrize("scheme,coeffs,theta,dt", _C6_CASES,
                         ids=[f"{s}-{t}-{d}" for s, _, t, d in _C6_CASES])
def test_c6_amplification(scheme, coeffs, theta, dt, detail):
    rec = run_amplification_validation(*coeffs, theta if theta is not None else 0.0, dt, 10**6,
                                       scheme=scheme, seed=11)
    detail(f"z={rec.z:+.2f}")
    assert abs(rec.z) < 4


# -- 7: rate limits ---------------------------------------------------------------------------

def _admissible_sets(n: int, seed: int):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        sigma, gamma, lam = rng.uniform(0, 4), rng.uniform(0, 4), rng.uniform(0, 5)
        sg = math.sqrt(gamma)
        mu = -(sigma + lam * sg * (sg + 2) + rng.uniform(0.05, 10)) / 2
        out.append((mu, sigma, gamma, lam))
    return out


@acc(7)
def test_c7_nonlinear_rates_limit(detail):
    dt, worst = 1e-8, 0.0
    for mu, sigma, gamma, lam in _admissible_sets(100, 7):
        alpha = nonlinear_alpha(mu, sigma, gamma, lam)
        assert alpha < 0
        for beta in (backward_euler_rate_beta1, compensated_backward_euler_rate_beta2):
            err = abs(beta(mu, sigma, gamma, lam, dt) - alpha) / abs(alpha)
            worst = max(worst, err)
            assert err < 1e-4
    detail(f"max rel err {worst:.2e}")


@acc(7)
def test_c7_linear_factor_limit(detail):
    rng = np.random.default_rng(8)
    dt, worst = 1e-8, 0.0
    for _ in range(100):
        b, c, lam = rng.uniform(-3, 3), rng.uniform(-0.9, 3), rng.uniform(0, 5)
        a = -(rng.uniform(0.05, 10) + b * b + lam * c * (2 + c)) / 2
        l = linear_l(a, b, c, lam)
        theta = rng.uniform(0, 1)
        for g in (cstm_amplification(a, b, c, lam, theta, dt), stm_amplification(a, b, c, lam, theta, dt),
                  semi_tamed_amplification(a, b, c, lam, dt)):
            err = abs((g - 1) / dt - l) / abs(l)
            worst = max(worst, err)
            assert err < 1e-4
    detail(f"max rel err {worst:.2e}")


@acc(7)
def test_c7_compensated_backward_euler_a_stable():
    for mu, sigma, gamma, lam in _admissible_sets(100, 9):
        for dt in (1e-3, 1.0, 1e3):
            assert compensated_backward_euler_rate_beta2(mu, sigma, gamma, lam, dt) < 0


# -- 8: scheme identities ------------------------------------------------------------------------

_ZERO = JumpSdeProblem(d=1, m=1, drift=np.zeros_like, diffusion=lambda x: np.zeros(x.shape + (1,)),
                       jump=np.zeros_like, lam=2.0, x0=[0.7], name="zero",
                       split=DriftSplit(np.zeros_like, np.zeros_like))


def _pair_identical(problem, spec_a, spec_b, n_paths=100, n=64, dt=1 / 64) -> bool:
    for path in range(n_paths):
        grid = path_grid(2024, path, n, problem.m, dt, problem.lam)
        if not np.array_equal(integrate_path(problem, spec_a, grid).states,
                              integrate_path(problem, spec_b, grid).states):
            return False
    return True


@acc(8)
@pytest.mark.parametrize("name", ["linear", "quartic", "cubic_split"])
def test_c8_cstm_theta_zero_is_stm(name):
    assert _pair_identical(get_problem(name), SchemeSpec(SchemeKind.CSTM, 0.0), SchemeSpec(SchemeKind.STM, 0.0))


@acc(8)
@pytest.mark.parametrize("name", ["quartic", "cubic_split"])
def test_c8_semi_tamed_without_u_is_tamed(name):
    p = get_problem(name)
    p = p.with_split(DriftSplit(np.zeros_like, p.drift))
    assert _pair_identical(p, SchemeSpec(SchemeKind.SEMI_TAMED), SchemeSpec(SchemeKind.TAMED))


@acc(8)
def test_c8_compensated_semi_tamed_is_semi_tamed():
    assert _pair_identical(get_problem("cubic_split"), SchemeSpec(SchemeKind.COMPENSATED_SEMI_TAMED),
                           SchemeSpec(SchemeKind.SEMI_TAMED))


@acc(8)
def test_c8_zero_dynamics_constant():
    for path in range(100):
        grid = path_grid(77, path, 32, 1, 0.1, _ZERO.lam)
        for kind in SchemeKind:
            traj = integrate_path(_ZERO, SchemeSpec(kind, 0.5), grid)
            assert (traj.states == 0.7).all(), kind


# -- 9: increment statistics ----------------------------------------------------------------------

N9 = 10**6


@acc(9)
@pytest.mark.parametrize("stream,dt", [(1, 2.0**-10), (2, 0.5)])
def test_c9_brownian_moments(stream, dt, detail):
    w = generate_brownian(RandomSource(9, stream), N9, 1, dt)[:, 0]
    z_mean = w.mean() / math.sqrt(dt / N9)
    z_var = (w.var(ddof=1) - dt) / (dt * math.sqrt(2 / N9))
    detail(f"z_mean={z_mean:+.2f} z_var={z_var:+.2f}")
    assert abs(z_mean) < 4 and abs(z_var) < 4


@acc(9)
@pytest.mark.parametrize("stream,lam,dt", [(3, 1.0, 1.0), (4, 9.0, 0.01), (5, 4.0, 5.0)])
def test_c9_compensated_poisson_moments(stream, lam, dt, detail):
    nbar = compensate(generate_poisson(RandomSource(9, stream), N9, lam, dt), lam, dt)
    mean = lam * dt
    # fourth central moment of a Poisson variable is mean (1 + 3 mean)
    z_mean = nbar.mean() / math.sqrt(mean / N9)
    z_var = (nbar.var(ddof=1) - mean) / math.sqrt((mean * (1 + 3 * mean) - mean**2) / N9)
    detail(f"z_mean={z_mean:+.2f} z_var={z_var:+.2f}")
    assert abs(z_mean) < 4 and abs(z_var) < 4


# -- 10: reproducibility across thread counts --------------------------------------------------------

_C10_CONFIGS = {
    "converge": """
command = "converge"
[problem]
name = "linear"
[converge]
fine_exponent = 12
ratios = [1, 2, 4, 8, 16]
paths = 2000
[[schemes]]
name = "cstm"
theta = 0.0
[[schemes]]
name = "cstm"
theta = 0.5
[[schemes]]
name = "cstm"
theta = 1.0
""",
    "stability": """
command = "stability"
[problem]
name = "linear"
a = -1
b = 2
c = -0.9
lambda = 9
[stability]
dts = [0.02, 0.05, 0.08]
horizon = 2500
paths = 2000
[[schemes]]
name = "semi-tamed"
[[schemes]]
name = "tamed"
""",
}


@acc(10)
@pytest.mark.slow
@pytest.mark.parametrize("command", list(_C10_CONFIGS))
def test_c10_threads_byte_identical(command, tmp_path, capsys, detail):
    cfg = tmp_path / f"{command}.toml"
    cfg.write_text(_C10_CONFIGS[command])
    outputs = {}
    for threads in (1, 4, 8):
        out = tmp_path / f"t{threads}"
        assert main([command, "--config", str(cfg), "--out", str(out), "--threads", str(threads)]) == 0
        outputs[threads] = {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}
    capsys.readouterr()
    assert outputs[1] and outputs[1] == outputs[4] == outputs[8]
    detail(f"{len(outputs[1])} csv files")
