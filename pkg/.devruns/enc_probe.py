import time
import numpy as np
from gancollage.bundle import Bundle
from gancollage.projection import (EncoderTrainConfig, ProjectionConfig,
                                   train_encoder, project_z, sample_generated)

b = Bundle.load(".devruns/gan_probe.ncol")
gen, disc = b.gen, b.disc
t0 = time.time()
enc, log = train_encoder(gen, disc, EncoderTrainConfig(iters=600, batch_size=16, lr=2e-4, seed=11))
print(f"encoder trained in {(time.time()-t0)/60:.1f} min; baseline {log[0][1]:.4f} -> final {log[-1][1]:.4f}")
Bundle(gen=gen, disc=disc, enc=enc, seed=11, stages_done=["gan","encoder"]).save(".devruns/ge_probe.ncol")

# criterion 6 dry run: 50 generated targets, batched projection
rng = np.random.default_rng(500)
targets, z_true, labels = sample_generated(gen, rng, 50)
for lr in (0.02, 0.05, 0.1):
    t0 = time.time()
    res = project_z(targets, gen, disc, enc, ProjectionConfig(steps=200, lr=lr), labels)
    init = res.losses[0]; best = res.best_losses[-1]
    frac = float((best < 0.5 * init).mean())
    print(f"lr={lr}: recovered {frac*100:.0f}% (need >=90%), "
          f"mean init {init.mean():.4f} mean best {best.mean():.4f}, "
          f"{time.time()-t0:.0f}s, {res.step_seconds*1000:.0f} ms/step")
