import time
import numpy as np
from popgibbs import dmm, autodiff as ad
from popgibbs.estimators import GradSink
from popgibbs.smc import apg_run

hyper = dmm.DmmHyper()
rng = np.random.default_rng(0)
xs, truth = dmm.generate_corpus(1500, 4, 60, hyper, rng)
theta = ad.ParamStore(np.random.default_rng(1))
phi = ad.ParamStore(np.random.default_rng(2))
model = dmm.DmmModel(hyper, theta)
dmm.init_phi(phi, hyper)
enc = dmm.NeuralEncoder(phi, hyper)
kern = {"centers": dmm.CentersKernel(phi, hyper), "locals": dmm.LocalsKernel(phi, hyper)}
train_rng = np.random.default_rng(7)
t0 = time.time()
for step in range(5000):
    idx = train_rng.integers(0, 1500, size=10)
    sink = GradSink(phi, theta)
    sys_, metrics = apg_run(xs[idx], model, enc, kern, n_sweeps=4, n_particles=10,
                            rng=train_rng, grad_sink=sink)
    phi.adam_step(1e-3)
    theta.adam_step(1e-3)
    if step % 500 == 499:
        recon = dmm.recon_mse(xs[idx], sys_.state, theta)
        print(f"step {step+1}: lj={metrics[-1]['log_joint'].mean():.0f} recon={recon.mean():.2f} "
              f"({(time.time()-t0)/60:.1f} min)", flush=True)
phi.save("/root/pkg/.scratch/dmm_phi")
theta.save("/root/pkg/.scratch/dmm_theta")
print("done", (time.time()-t0)/60)
