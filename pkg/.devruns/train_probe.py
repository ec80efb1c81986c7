import time, sys
import numpy as np
from gancollage.trainer import SyntheticDatasetSpec, make_dataset, TrainConfig, train_gan
from gancollage.nets import GeneratorConfig, DiscriminatorConfig
from gancollage.bundle import Bundle

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
ds = make_dataset(SyntheticDatasetSpec(num_samples=8192, seed=7))
cfg = TrainConfig(seed=11, gan_iters=iters, batch_size=16,
                  generator=GeneratorConfig(base_channels=64),
                  discriminator=DiscriminatorConfig(widths=(16,32,64), feature_dim=128))
t0 = time.time()
gen, disc, log = train_gan(ds, cfg)
print(f"trained {iters} iters in {(time.time()-t0)/60:.1f} min")
print("last log rows:", log[-3:])

rng = np.random.default_rng(123)
worst = 0.0
for k in range(8):
    zs = rng.standard_normal((125, 128))
    imgs, _ = gen.forward(zs, np.full(125, k), mode="edit")
    gen_mean = imgs.data.mean(axis=(0, 2, 3))
    data_mean = ds.class_mean_color(k, 200)
    err = np.abs(gen_mean - data_mean).max()
    worst = max(worst, err)
    print(f"class {k}: gen {np.round(gen_mean,3)} data {np.round(data_mean,3)} maxerr {err:.3f}")
print("WORST CLASS COLOR ERROR:", round(worst, 4), "(criterion needs < 0.15)")
Bundle(gen=gen, disc=disc, seed=11, stages_done=["gan"]).save(".devruns/gan_probe.ncol")
