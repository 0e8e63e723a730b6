"""Sequential production store builds; resumable, logs per chunk."""
import os, sys, time
sys.path.insert(0, "/root/pkg/src")
from billiardqe.geometry import build_domain
from billiardqe.layer_ops import build_grid
from billiardqe import spectrum as sp

JOBS = [
    ("disc", "dirichlet"), ("disc", "neumann"),
    ("stadium", "dirichlet"), ("stadium", "neumann"),
    ("ellipse", "dirichlet"), ("ellipse", "neumann"),
]
LAM = (0.5, 30.0)

for name, bc in JOBS:
    dom = build_domain(name)
    grid = build_grid(dom, LAM[1])
    out = f"/root/pkg/artifacts/stores/{name}_{bc}"
    tag = f"{name}/{bc}[n={grid.n}]"
    t0 = time.time()
    print(f"=== {tag} -> {out}", flush=True)
    store, rep = sp.build_spectrum(
        dom, bc, LAM, grid=grid, out_dir=out, qmc_every=60,
        qmc_points=50_000, seed=17,
        progress=lambda m, tag=tag: print(f"[{tag}] {m}", flush=True))
    print(f"=== {tag} DONE {len(store.traces)} traces, "
          f"{len(rep.rejected)} rejected, {len(rep.rescan_windows)} rescans, "
          f"{(time.time()-t0)/60:.1f} min", flush=True)
    for r in rep.rejected[:10]:
        print(f"    rej {r}", flush=True)
    for w in rep.warnings[:10]:
        print(f"    warn {w}", flush=True)
print("ALL DONE", flush=True)
