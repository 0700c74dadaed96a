import time
import numpy as np
from mixpol import sac

# ShapedPendulum SG-RP at the tuned setting: critic lr 1e-2, kappa 0.1, alpha 0.1
for seed in (1, 2, 3, 4, 5):
    cfg = sac.SACConfig(env_kind="pendulum-shaped", policy="SG", estimator="rp",
                        hidden=(64, 64), critic_lr=1e-2, kappa=0.1, alpha=0.1,
                        buffer_capacity=100_000, initial_uniform_steps=10_000,
                        total_steps=100_000, seed=seed)
    t0 = time.time()
    rec = sac.train_loop(cfg)
    rets = [r[3] for r in rec.rows]
    n = max(1, len(rets) // 10)
    print(f"seed {seed}: episodes {len(rets)} final-window mean "
          f"{np.mean(rets[-n:]):.1f} best {max(rets):.1f} "
          f"({time.time()-t0:.0f}s)", flush=True)
