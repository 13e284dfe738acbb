import time
import numpy as np
from popgibbs import gmm, autodiff as ad
from popgibbs.estimators import GradSink
from popgibbs.smc import apg_run, LatentState

hyper = gmm.GmmHyper()
rng = np.random.default_rng(0)
xs, truth = gmm.generate_corpus(2000, 3, 60, hyper, rng)
model = gmm.GmmModel(hyper)
store = ad.ParamStore(np.random.default_rng(1))
gmm.init_network_params(store, hyper)
enc = gmm.NeuralEncoder(store, hyper)
kern = {"globals": gmm.NeuralGlobalKernel(store, hyper), "assign": gmm.NeuralLocalKernel(store, hyper)}
eval_x = xs[:64]
eval_state = LatentState({"mu": truth["mu"][:64][:, None], "tau": truth["tau"][:64][:, None],
                          "c": truth["c"][:64][:, None]})
def kls():
    kg, kl = gmm.kl_to_exact(eval_x, eval_state, store, hyper)
    return float(np.mean(kg)), float(np.mean(kl))
print("init KL:", kls(), flush=True)
train_rng = np.random.default_rng(7)
t0 = time.time()
for step in range(20000):
    idx = train_rng.integers(0, 2000, size=10)
    sink = GradSink(store)
    apg_run(xs[idx], model, enc, kern, n_sweeps=5, n_particles=10, rng=train_rng, grad_sink=sink)
    store.adam_step(lr=2.5e-4)
    if step % 1000 == 999:
        kg, kl = kls()
        print(f"step {step+1}: kl_global={kg:.4f} kl_local={kl:.4f} ({(time.time()-t0)/60:.1f} min)", flush=True)
store.save("/root/pkg/.scratch/probe_ckpt")
print("done min:", (time.time()-t0)/60)
