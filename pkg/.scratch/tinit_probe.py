import sys, time
import numpy as np
from popgibbs import gmm, harness, autodiff as ad
from popgibbs.estimators import GradSink
from popgibbs.smc import apg_run, LatentState
from popgibbs import corpus as corpus_io

steps = int(sys.argv[1]); kappa = float(sys.argv[2])
x, _, truth = corpus_io.read_corpus("/root/pkg/.artifacts/gmm_desk/train_corpus")
cfg = harness.make_config({"model": "gmm", "corpus": "x", "steps": steps, "batch": 10,
                           "sweeps": 5, "particles": 10, "seed": 0})
bundle = harness.build_bundle(cfg)
phi = bundle.phi
m = 3
wt = phi.get("gmm.cond_t.0.W")
wt[2:] = kappa * (np.eye(m) - 1.0 / m)   # label rows: softened indicator map
rng = np.random.default_rng([0, 555])
ev = slice(0, 64)
est = LatentState({"mu": truth["mu"][ev][:, None], "tau": truth["tau"][ev][:, None],
                   "c": truth["c"][ev][:, None]})
def kls():
    kg, kl = gmm.kl_to_exact(x[ev], est, phi, bundle.hyper)
    return round(float(np.mean(kg)), 2), round(float(np.mean(kl)), 4)
print(f"kappa={kappa} init KL:", kls(), flush=True)
t0=time.time()
for step in range(steps):
    epoch, slot = divmod(step, 200)
    order = harness._epoch_order(0, epoch, 2000)
    idx = order[slot*10:slot*10+10]
    sink = GradSink(phi)
    apg_run(x[idx], bundle.model, bundle.encoder, bundle.kernels, 5, 10, rng, grad_sink=sink)
    phi.adam_step(2.5e-4)
    if step % 1000 == 999:
        print(f"step {step+1}: KL={kls()} ({(time.time()-t0)/60:.1f}m)", flush=True)
