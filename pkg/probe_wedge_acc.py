import time
from pathforms.geometry import sphere
from pathforms.mc import conditional_weak_suite

t0 = time.time()
reps = conditional_weak_suite(
    sphere(2), mode="wedge", seed=20260817, n_samples=100000,
    n_coarse=128, n_configs=20, batch_size=2048, workers=1,
)
for r in reps:
    margin = (r.tolerance - abs(r.estimate)) / r.std_error if r.std_error else float("inf")
    print(f"{r.experiment} est={r.estimate:+.6f} se={r.std_error:.6f} "
          f"margin={margin:+.2f}sigma {'PASS' if r.verdict else 'FAIL'}")
print("all pass:", all(r.verdict for r in reps), f" t={time.time()-t0:.0f}s")
