import sys, time
import numpy as np
from popgibbs import gmm, harness, autodiff as ad
from popgibbs.estimators import GradSink
from popgibbs.smc import apg_run, LatentState
from popgibbs import corpus as corpus_io

lr = float(sys.argv[1])
steps = int(sys.argv[2])
x, _, truth = corpus_io.read_corpus("/root/pkg/.artifacts/gmm_desk/train_corpus")
cfg = harness.make_config({"model": "gmm", "corpus": "x", "steps": steps, "batch": 10,
                           "sweeps": 5, "particles": 10, "lr": lr, "seed": 0})
bundle = harness.build_bundle(cfg)   # same deterministic init as the canonical run
rng = np.random.default_rng([0, 555])
ev = slice(0, 64)
est = LatentState({"mu": truth["mu"][ev][:, None], "tau": truth["tau"][ev][:, None],
                   "c": truth["c"][ev][:, None]})
def kls():
    kg, kl = gmm.kl_to_exact(x[ev], est, bundle.phi, bundle.hyper)
    return float(np.mean(kg)), float(np.mean(kl))
print(f"lr={lr} init KL:", kls(), flush=True)
t0=time.time()
for step in range(steps):
    epoch, slot = divmod(step, 200)
    order = harness._epoch_order(0, epoch, 2000)
    idx = order[slot*10:slot*10+10]
    sink = GradSink(bundle.phi)
    apg_run(x[idx], bundle.model, bundle.encoder, bundle.kernels, 5, 10, rng, grad_sink=sink)
    bundle.phi.adam_step(lr)
    if step % 1000 == 999:
        print(f"lr={lr} step {step+1}: KL={kls()} ({(time.time()-t0)/60:.1f}m)", flush=True)
