import math
import time

import numpy as np

from condwalk.conditioning import (
    PointFunctional, PointSum, ExceedanceSet, eval_log_g, eval_log_g_batch,
)
from condwalk.models import builtin_model, solve_tilt
from condwalk.rng import stream
from condwalk.sampling import (
    sample_modulated, sample_path, sample_path_batch, sample_large_set_path,
)
from condwalk.runlength import (
    estimate_AB, select_k, saddlepoint_mean_logpdf, log_tilt_ratio,
)
from condwalk.errors import NotReached

norm = builtin_model("normal")
cexp = builtin_model("centered_exponential")

# 1. sample_modulated tilted route: normal target N(M/(1+b), b/(1+b))
rng = stream(7, "mod")
alpha, beta, m0 = 0.4, 9.0, 0.3
M = alpha * beta + m0
draws = np.array([sample_modulated(norm, alpha, beta, m0, rng)[0] for _ in range(20000)])
mu_want, var_want = M / (1 + beta), beta / (1 + beta)
se = math.sqrt(var_want / draws.size)
print(f"1. tilted-AR moments: mean {draws.mean():.4f} vs {mu_want:.4f} "
      f"({abs(draws.mean()-mu_want)/se:.2f} se), var {draws.var():.4f} vs {var_want:.4f}")

# reparam + envelope routes agree in law (same target)
rng = stream(7, "mod2")
d_rep = np.array([sample_modulated(norm, alpha, beta, m0, rng, method="reparam")[0] for _ in range(4000)])
d_env = np.array([sample_modulated(norm, alpha, beta, m0, rng, method="envelope")[0] for _ in range(4000)])
print(f"   reparam mean {d_rep.mean():.4f}, envelope mean {d_env.mean():.4f} (want {mu_want:.4f})")

# 2. sample_path -> eval_log_g bitwise
ev = PointSum(a=0.3, n=40)
for mode in ("paper_m0", "adaptive_mi"):
    ps = sample_path(norm, ev, k=10, rng=stream(11, mode), shift_mode=mode)
    lg, _ = eval_log_g(norm, ev, ps.values, shift_mode=mode)
    assert lg == ps.log_g, (mode, lg, ps.log_g)
print("2. sample_path re-scored bitwise: OK (paper_m0, adaptive_mi)")

ev2 = PointFunctional(u_total=40 * 0.2, n=40)
ps = sample_path(builtin_model("normal_usquare"), PointFunctional(u_total=60.0, n=40), k=10, rng=stream(12))
lg, _ = eval_log_g(builtin_model("normal_usquare"), PointFunctional(u_total=60.0, n=40), ps.values)
assert lg == ps.log_g
print("   usquare path re-scored bitwise: OK")

# 3. batch sampler vs batch evaluator
out = sample_path_batch(cexp, PointSum(a=0.25, n=60), k=20, L=300, rng=stream(13))
assert out["ok"].all(), out["ok"].mean()
lg, ok, _ = eval_log_g_batch(cexp, PointSum(a=0.25, n=60), out["values"])
assert ok.all()
assert np.array_equal(lg, out["log_g"]), np.max(np.abs(lg - out["log_g"]))
print(f"3. batch sampler == batch evaluator bitwise: OK (resamples={out['n_resamples']})")

# scalar sampler law matches batch sampler law (not bitwise; same AR scheme)
m1 = np.array([sample_path(cexp, PointSum(a=0.25, n=60), k=1, rng=stream(14, i)).values[0]
               for i in range(4000)])
t0 = solve_tilt(cexp, 0.25)
print(f"4. k=1 draw mean {m1.mean():.4f} vs m0 0.25 "
      f"(tilted par {t0:.4f}); batch k=1 mean {sample_path_batch(cexp, PointSum(a=0.25, n=60), k=1, L=4000, rng=stream(15))['values'].mean():.4f}")

# 5. k = n completion (identity): path sums exactly to n*a
ps = sample_path(norm, PointSum(a=0.5, n=6), k=6, rng=stream(16))
assert ps.values.size == 6 and abs(ps.values.sum() - 3.0) < 1e-12
ps2 = sample_path(cexp, PointSum(a=0.4, n=2), k=2, rng=stream(17))
assert abs(ps2.values.sum() - 0.8) < 1e-12 and ps2.values.min() > -1
print(f"5. k=n completion: normal sum {ps.values.sum():.2e}->3.0, cexp pair {ps2.values}")

# 6. exceedance-set sampling: S > a, mean overshoot ~ 1/(n t_a)
n, a = 400, 0.25
t_a = solve_tilt(cexp, a)
S = []
for i in range(2000):
    pl = sample_large_set_path(cexp, ExceedanceSet(a=a, n=n), k=5, rng=stream(18, i))
    S.append(pl.randomized_level)
S = np.array(S)
print(f"6. exceedance level: min over a {S.min() - a:.2e} > 0, "
      f"mean overshoot {(S - a).mean():.5f} vs 1/(n t_a) {1/(n*t_a):.5f}")
pl = sample_large_set_path(cexp, ExceedanceSet(a=a, n=n, c=0.05), k=5, rng=stream(19))
assert a < pl.randomized_level < a + 0.05
print(f"   truncated level in (a, a+c): {pl.randomized_level:.4f}")

# 7. LDP regime: tilted AR acceptance stays ~1 (count resamples)
n, a = 1000, 0.6662985221
out = sample_path_batch(cexp, PointSum(a=a, n=n), k=100, L=50, rng=stream(20))
assert out["ok"].all()
print(f"7. LDP regime n=1000 P~1e-8: batch ok, resamples={out['n_resamples']} over {50*100} draws")

# 8. saddlepoint + tilt ratio sanity: normal exact
#    density of mean of n std normals at u: N(0, 1/n)
n, u = 30, 0.4
want = -0.5 * math.log(2 * math.pi / n) - n * u * u / 2
got = saddlepoint_mean_logpdf(norm, n, u)
print(f"8. saddlepoint normal exact: {got:.12f} vs {want:.12f}")
assert abs(got - want) < 1e-12
assert abs(log_tilt_ratio(norm, 7, 0.3) - 7 * (0.3 * 0.3 - 0.045)) < 1e-14

# 9. estimate_AB: adaptive_mi on normal should give ERE ~ 0 at any k
ev = PointSum(a=0.3, n=50)
est = estimate_AB(norm, ev, k=30, L=2000, rng=21, shift_mode="adaptive_mi")
print(f"9. estimate_AB normal adaptive_mi k=30: ERE {1-est.b_hat:.2e}, "
      f"VRE {est.a_hat - est.b_hat**2:.2e}, discarded {est.n_discarded}")
est2 = estimate_AB(norm, ev, k=30, L=2000, rng=21, shift_mode="paper_m0")
print(f"   paper_m0 k=30: ERE {1-est2.b_hat:.4f} +- {2*est2.b_stderr:.4f}, "
      f"VRE {est2.a_hat - est2.b_hat**2:.3e}")

# oracle variant on the same seed: exact gaussian conditional
def gauss_cond(paths):
    L, k = paths.shape
    na = 50 * 0.3
    run = np.concatenate([np.zeros((L, 1)), np.cumsum(paths, axis=1)], axis=1)
    lp = np.zeros(L)
    for i in range(k):
        mean = (na - run[:, i]) / (50 - i)
        var = (50 - i - 1) / (50 - i) if i < k else None
        lp += -0.5 * np.log(2 * np.pi * var) - (paths[:, i] - mean) ** 2 / (2 * var)
    return lp

est3 = estimate_AB(norm, ev, k=30, L=2000, rng=21, conditional_logpdf=gauss_cond,
                   shift_mode="paper_m0")
print(f"   oracle variant k=30: ERE {1-est3.b_hat:.4f}, VRE {est3.a_hat-est3.b_hat**2:.3e}")

# 10. select_k: cexp n=100 a=0.2472..., delta=0.1  (geometric+bisection)
t0 = time.time()
ev = PointSum(a=0.2472256149, n=100)
try:
    rep = select_k(cexp, ev, delta=0.05, L=4000, rng=22)
    print(f"10. select_k delta=0.05: k_delta={rep.k_delta} "
          f"(scanned {list(rep.ks)}) in {time.time()-t0:.1f}s")
    for j, k in enumerate(rep.ks):
        print(f"    k={k:3d} ERE {rep.ere_bar[j]:+.4f} CI [{rep.ci_lo[j]:+.4f}, {rep.ci_hi[j]:+.4f}]"
              f" disc {rep.n_discarded[j]}")
except NotReached as e:
    rep = e.report
    print(f"10. select_k NotReached: {e}")
    for j, k in enumerate(rep.ks):
        print(f"    k={k:3d} ERE {rep.ere_bar[j]:+.4f} CI [{rep.ci_lo[j]:+.4f}, {rep.ci_hi[j]:+.4f}]")

print("ALL SAMPLING/RUNLENGTH SMOKE OK")
