import time, sys
import numpy as np
from gancollage.bundle import Bundle
from gancollage.projection import (AuxTrainConfig, ProjectionConfig, train_aux,
                                   project_z, project_zeta, sample_generated)

hidden = tuple(int(v) for v in sys.argv[1].split(","))
iters = int(sys.argv[2])
b = Bundle.load(".devruns/ge_probe.ncol")
gen, disc, enc = b.gen, b.disc, b.enc

t0 = time.time()
aux, log = train_aux(gen, disc, enc,
                     AuxTrainConfig(batch_size=8, hidden=hidden, inner_lr=0.1,
                                    outer_lr=1e-3, seed=11), iters=iters)
print(f"aux hidden={hidden} trained {iters} iters in {(time.time()-t0)/60:.1f} min; "
      f"final meta loss {log[-1][1]:.4f} recon {log[-1][2]:.6f}")

rng = np.random.default_rng(900)
targets, _, labels = sample_generated(gen, rng, 50)
zres = project_z(targets, gen, disc, enc, ProjectionConfig(steps=100, lr=0.02), labels)
z_level = zres.best_losses[-1]          # per-target 100-step level
print(f"z path: init {zres.losses[0].mean():.5f} best@100 {z_level.mean():.6f}")

for zlr in (0.02, 0.05, 0.1):
    zeta = project_zeta(targets, gen, disc, enc, aux, ProjectionConfig(steps=100, lr=zlr), labels)
    # per-target: first iteration whose best loss <= z-path's 100-step level
    reach = np.full(50, np.nan)
    for i in range(50):
        hit = np.nonzero(zeta.best_losses[:, i] <= z_level[i])[0]
        reach[i] = hit[0] if hit.size else np.inf
    finite = np.isfinite(reach)
    print(f"zeta lr={zlr}: init {zeta.losses[0].mean():.5f} best@100 {zeta.best_losses[-1].mean():.6f} "
          f"reached z-level for {finite.sum()}/50; mean iters (unreached=100): "
          f"{np.where(finite, reach, 100.0).mean():.1f} (need <=67)")
    print(f"  step overhead: z {zres.step_seconds*1000:.0f} ms vs zeta {zeta.step_seconds*1000:.0f} ms "
          f"(+{(zeta.step_seconds/zres.step_seconds-1)*100:.1f}%)")
