import sys, time
import numpy as np
from popgibbs import gmm, harness, autodiff as ad
from popgibbs.estimators import GradSink
from popgibbs.smc import apg_run, LatentState
from popgibbs import corpus as corpus_io

mode = sys.argv[1]          # "wd" or "initscale"
steps = int(sys.argv[2])
x, _, truth = corpus_io.read_corpus("/root/pkg/.artifacts/gmm_desk/train_corpus")
cfg = harness.make_config({"model": "gmm", "corpus": "x", "steps": steps, "batch": 10,
                           "sweeps": 5, "particles": 10, "seed": 0})
bundle = harness.build_bundle(cfg)
phi = bundle.phi
STATS = [n for n in phi.names() if ".enc_s" in n or ".enc_t" in n or ".cond_s" in n or ".cond_t" in n]
if mode == "initscale":
    for n in STATS:
        w = phi.get(n)
        if w.ndim == 2 and w.shape[0] > 2:
            w[2:] *= 0.1          # shrink the label-feature rows at init
rng = np.random.default_rng([0, 555])
ev = slice(0, 64)
est = LatentState({"mu": truth["mu"][ev][:, None], "tau": truth["tau"][ev][:, None],
                   "c": truth["c"][ev][:, None]})
def kls():
    kg, kl = gmm.kl_to_exact(x[ev], est, phi, bundle.hyper)
    return round(float(np.mean(kg)), 2), round(float(np.mean(kl)), 4)
print(f"{mode} init KL:", kls(), flush=True)
t0=time.time()
wd = 0.1 if mode == "wd" else 0.0
for step in range(steps):
    epoch, slot = divmod(step, 200)
    order = harness._epoch_order(0, epoch, 2000)
    idx = order[slot*10:slot*10+10]
    sink = GradSink(phi)
    apg_run(x[idx], bundle.model, bundle.encoder, bundle.kernels, 5, 10, rng, grad_sink=sink)
    if wd:
        for n in STATS:
            phi.tensor(n).grad += wd * phi.get(n)
    phi.adam_step(2.5e-4)
    if step % 1000 == 999:
        print(f"{mode} step {step+1}: KL={kls()} ({(time.time()-t0)/60:.1f}m)", flush=True)
